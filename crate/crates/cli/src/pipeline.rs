//! One function per subcommand. Each reads its inputs from the run directory,
//! writes its artifacts and a manifest, and returns the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use opcrecipe::features::{
    builtin_pool, column_names, parse_label_jsonl, reserve_features, write_label_jsonl, FeatureDef, FeaturePool,
    FeatureVector, LabelRecord, Labeler, TypeTag,
};
use opcrecipe::geometry::{
    fragment_clip, parse_layout, render_svg, synth_clip, BinaryGrid, ControlPoint, Grid, LayoutClip, PointKind, SvgOverlay,
};
use opcrecipe::metrics::MetricsRow;
use opcrecipe::opc::{apply_recipe_points, OpcEngine};
use opcrecipe::recipes::{
    emit_downstream, emit_jsonl, emit_rules, labeled_set, parse_jsonl, recipe_classes, self_improve, validate_rules,
    DecisionTree, LabeledSet, Naming, RecipeRule, RoundAudit, TableSource, TrainReport,
};
use opcrecipe::rl::{train, ClipMovements, OpcEnv, PolicyCheckpoint};
use opcrecipe_annotator::{render_point_image, Annotator, MiningOutcome, PointJob, Provenance, RenderedPointImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Variant};
use crate::error::CliError;
use crate::report::{suite_comparison, ComparisonTable};
use crate::rundir::*;

pub type CmdResult<T = Manifest> = Result<T, CliError>;

pub fn check(cfg: &RunConfig) -> CmdResult<()> {
    let v = cfg.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(v))
    }
}

/// Runs `f` on a pool of `cfg.workers` threads.
pub fn with_workers<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> CmdResult<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().map_err(CliError::runtime)?;
    Ok(pool.install(f))
}

pub fn engine(cfg: &RunConfig) -> CmdResult<OpcEngine> {
    Ok(OpcEngine::new(cfg.litho, cfg.metrics.clone(), cfg.opc)?)
}

/// Default run directory: `<runs_dir>/<timestamp>-<variant>`.
pub fn fresh_run_dir(cfg: &RunConfig) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    cfg.runs_dir.join(format!("{stamp}-{}", cfg.variant.as_str().replace('+', "_")))
}

fn open(out: &Path, command: &str, cfg: &RunConfig) -> CmdResult<RunDir> {
    check(cfg)?;
    RunDir::open(out, command, cfg)
}

fn write_config(run: &mut RunDir, cfg: &RunConfig) -> CmdResult<()> {
    run.write(CONFIG, (cfg.to_json() + "\n").as_bytes())
}

fn clip_file(i: usize, clip: &LayoutClip) -> String {
    format!("{CLIPS}/{i:04}-{}.clip", clip.id)
}

pub fn load_clips(run: &mut RunDir) -> CmdResult<Vec<(String, LayoutClip)>> {
    run.read_dir(CLIPS, ".clip", "gen")?
        .into_iter()
        .map(|(rel, text)| {
            let clip = parse_layout(&text).map_err(|e| CliError::Validation(vec![format!("{rel}: {e}")]))?;
            let stem = rel.rsplit('/').next().unwrap_or(&rel).trim_end_matches(".clip").to_string();
            Ok((stem, clip))
        })
        .collect()
}

/// `gen`: the synthetic suite, clip `i` drawn with seed `seed + i`.
pub fn gen(cfg: &RunConfig, out: &Path) -> CmdResult {
    let mut run = open(out, "gen", cfg)?;
    write_config(&mut run, cfg)?;
    run.reset_dir(CLIPS)?;
    for i in 0..cfg.clips {
        let clip = synth_clip(cfg.seed.wrapping_add(i as u64), &cfg.synth)?;
        run.write(&clip_file(i, &clip), clip.to_text().as_bytes())?;
    }
    run.finish()
}

/// `ingest`: layout files (or directories of `*.clip` files) into the run.
pub fn ingest(cfg: &RunConfig, out: &Path, inputs: &[PathBuf]) -> CmdResult {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "clip"))
                .collect();
            v.sort();
            files.extend(v);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage("ingest needs at least one layout file".into()));
    }
    let mut errors = Vec::new();
    let mut clips: Vec<LayoutClip> = Vec::new();
    for f in &files {
        match std::fs::read_to_string(f).map_err(|e| e.to_string()).and_then(|t| parse_layout(&t).map_err(|e| e.to_string())) {
            Ok(c) if clips.iter().any(|o| o.id == c.id) => errors.push(format!("{}: duplicate clip id `{}`", f.display(), c.id)),
            Ok(c) => clips.push(c),
            Err(e) => errors.push(format!("{}: {e}", f.display())),
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Validation(errors));
    }
    let cfg = RunConfig { clips: clips.len(), ..cfg.clone() };
    let mut run = open(out, "ingest", &cfg)?;
    write_config(&mut run, &cfg)?;
    run.reset_dir(CLIPS)?;
    for (i, clip) in clips.iter().enumerate() {
        run.write(&clip_file(i, clip), clip.to_text().as_bytes())?;
    }
    run.finish()
}

/// Result of running OPC over the suite for one variant.
pub struct VariantRun {
    pub rows: Vec<MetricsRow>,
    /// Wall time of the per-clip work, recipe evaluation included.
    pub elapsed_s: f64,
}

fn metrics_csv(rows: &[MetricsRow]) -> CmdResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::runtime(e.to_string()))
}

pub fn read_metrics(bytes: &[u8]) -> CmdResult<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}

/// Runs OPC per clip with the points chosen by `points_for`, then writes
/// metrics, masks and the points used.
fn run_variant(
    run: &mut RunDir,
    cfg: &RunConfig,
    variant: Variant,
    clips: &[(String, LayoutClip)],
    points_for: impl Fn(usize, &opcrecipe::opc::PreparedClip) -> CmdResult<Vec<ControlPoint>> + Sync,
) -> CmdResult<VariantRun> {
    let eng = engine(cfg)?;
    let t0 = Instant::now();
    let results = with_workers(cfg, || {
        clips
            .par_iter()
            .enumerate()
            .map(|(i, (_, clip))| {
                let t = Instant::now();
                let prep = eng.prepare(clip)?;
                let points = points_for(i, &prep)?;
                let res = eng.run(&prep, &points)?;
                let ms = t.elapsed().as_millis() as u64;
                Ok((points, res, ms))
            })
            .collect::<CmdResult<Vec<_>>>()
    })??;
    let elapsed_s = t0.elapsed().as_secs_f64();
    let dir = masks_dir(variant);
    run.reset_dir(&dir)?;
    let mut rows = Vec::with_capacity(clips.len());
    for ((stem, clip), (points, res, ms)) in clips.iter().zip(results) {
        let ev = &res.evaluation;
        rows.push(MetricsRow {
            clip_id: clip.id.clone(),
            variant: variant.as_str().into(),
            pvb: ev.pvb,
            epe_n: ev.epe.epe_n,
            epe_d: ev.epe.epe_d,
            l2: ev.loss.l2,
            loss_total: ev.loss.total,
            runtime_ms: if cfg.record_runtime { ms } else { 0 },
        });
        run.write(&format!("{dir}/{stem}.clip"), res.mask_clip(clip).to_text().as_bytes())?;
        run.write(&format!("{dir}/{stem}.points.json"), serde_json::to_string(&points)?.as_bytes())?;
    }
    run.write(&metrics_path(variant), &metrics_csv(&rows)?)?;
    Ok(VariantRun { rows, elapsed_s })
}

/// `opc`: baseline OPC with the nominal recipe.
pub fn opc(cfg: &RunConfig, out: &Path) -> CmdResult<(Manifest, VariantRun)> {
    let mut run = open(out, "opc", cfg)?;
    let clips = load_clips(&mut run)?;
    let vr = run_variant(&mut run, cfg, Variant::Opc, &clips, |_, prep| Ok(prep.fragmentation.points.clone()))?;
    Ok((run.finish()?, vr))
}

/// `rl-train`: PPO over the suite, greedy placements, and their OPC metrics.
pub fn rl_train(cfg: &RunConfig, out: &Path) -> CmdResult<(Manifest, VariantRun)> {
    let mut run = open(out, "rl-train", cfg)?;
    let clips = load_clips(&mut run)?;
    let eng = engine(cfg)?;
    let plain: Vec<LayoutClip> = clips.iter().map(|(_, c)| c.clone()).collect();
    let (ckpt, moves) = with_workers(cfg, || -> CmdResult<(PolicyCheckpoint, Vec<ClipMovements>)> {
        let env = OpcEnv::new(&plain, &eng, &cfg.env, &cfg.ppo)?;
        let ckpt = train(&env, &cfg.ppo, |s| {
            log::info!(
                "update {}: episode reward {:.4}, final {:.4}, entropy {:.3}",
                s.update,
                s.mean_episode_reward,
                s.mean_final_reward,
                s.losses.entropy
            )
        })?;
        let moves = env.extract(&ckpt)?;
        Ok((ckpt, moves))
    })??;
    if let Some(why) = &ckpt.aborted {
        log::warn!("training stopped early: {why}");
    }
    run.write(CHECKPOINT, ckpt.to_json()?.as_bytes())?;
    run.write(REWARD_TRACE, ckpt.reward_trace_csv().as_bytes())?;
    run.write(MOVEMENTS, serde_json::to_string(&moves)?.as_bytes())?;
    let vr = run_variant(&mut run, cfg, Variant::OpcRl, &clips, |i, _| Ok(moves[i].points.clone()))?;
    Ok((run.finish()?, vr))
}

fn load_movements(run: &mut RunDir, clips: &[(String, LayoutClip)]) -> CmdResult<Vec<ClipMovements>> {
    let moves: Vec<ClipMovements> = serde_json::from_str(&run.read_string(MOVEMENTS, "rl-train")?)?;
    if moves.len() != clips.len() || moves.iter().zip(clips).any(|(m, (_, c))| m.clip_id != c.id) {
        return Err(CliError::Runtime(format!("{MOVEMENTS} does not match the clips in {CLIPS}; rerun rl-train")));
    }
    Ok(moves)
}

/// Provenance of one point's labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceLine {
    pub clip_id: String,
    pub point_id: usize,
    pub types: Provenance,
    pub features: BTreeMap<String, Provenance>,
    pub cached: bool,
    pub disagreements: usize,
}

fn placeholder_image() -> RenderedPointImage {
    RenderedPointImage {
        png: Vec::new(),
        canvas_px: 0,
        nm_per_px: 0.0,
        origin_nm: (0.0, 0.0),
        clip_width_nm: 0,
        clip_height_nm: 0,
        marker_px: (0, 0),
    }
}

/// `annotate`: feature pool, per-point feature vectors and RL classes.
pub fn annotate(cfg: &RunConfig, out: &Path) -> CmdResult {
    let mut run = open(out, "annotate", cfg)?;
    let clips = load_clips(&mut run)?;
    let moves = load_movements(&mut run, &clips)?;
    let mut acfg = cfg.annotator.clone();
    if acfg.cache_dir.is_none() && acfg.mode.is_remote() {
        acfg.cache_dir = Some(cfg.cache_dir.clone());
    }
    let ann = Annotator::new(acfg)?;
    let remote = cfg.annotator.mode.is_remote();
    let render = |clip: &LayoutClip, pt: &ControlPoint| -> CmdResult<RenderedPointImage> {
        Ok(render_point_image(clip, pt, &cfg.annotator.render)?)
    };

    let mined: MiningOutcome = if remote {
        let epe: Vec<(usize, ControlPoint)> = moves
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.points.iter().filter(|p| p.kind == PointKind::Epe).map(move |p| (i, *p)))
            .collect();
        let k = cfg.mining_images.min(epe.len()).max(1);
        let images = (0..k)
            .map(|j| {
                let (i, p) = epe[j * epe.len() / k];
                render(&clips[i].1, &p)
            })
            .collect::<CmdResult<Vec<_>>>()?;
        ann.mine_features(&images)?
    } else {
        ann.mine_features(&[])?
    };
    let pool = mined.pool;
    run.write(POOL, (serde_json::to_string_pretty(&pool)? + "\n").as_bytes())?;
    log::info!(
        "pool: {} features ({} malformed, {} duplicates, {} conflicting)",
        pool.features.len(),
        mined.malformed,
        mined.duplicates,
        mined.conflicting_descriptions
    );

    run.reset_dir(LABELS)?;
    let mut prov_lines = String::new();
    let (mut flagged, mut disagreements) = (0usize, 0usize);
    for ((stem, clip), m) in clips.iter().zip(&moves) {
        let images: Vec<RenderedPointImage> = if remote {
            m.points.iter().map(|p| render(clip, p)).collect::<CmdResult<_>>()?
        } else {
            vec![placeholder_image()]
        };
        let jobs: Vec<PointJob> = m
            .points
            .iter()
            .enumerate()
            .map(|(j, p)| PointJob { clip, point: *p, image: if remote { &images[j] } else { &images[0] } })
            .collect();
        let labeled = ann.annotate_points(&jobs, &pool)?;
        let mut records = Vec::with_capacity(labeled.len());
        for (a, rec) in labeled.iter().zip(&m.records) {
            records.push(LabelRecord::new(&a.vector, &pool, rec.class));
            flagged += if remote { a.flagged() } else { 0 };
            disagreements += a.disagreements;
            let line = ProvenanceLine {
                clip_id: clip.id.clone(),
                point_id: a.vector.point_id,
                types: a.type_provenance,
                features: pool.features.iter().map(|f| f.name.clone()).zip(a.provenance.iter().copied()).collect(),
                cached: a.cached,
                disagreements: a.disagreements,
            };
            prov_lines.push_str(&serde_json::to_string(&line)?);
            prov_lines.push('\n');
        }
        run.write(&format!("{LABELS}/{stem}.jsonl"), write_label_jsonl(&records).as_bytes())?;
    }
    run.write(PROVENANCE, prov_lines.as_bytes())?;
    if remote {
        log::info!("{flagged} labels filled geometrically, {disagreements} remote labels disagree with geometry");
    }
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: PointKind,
    pub train_points: usize,
    pub test_points: usize,
    pub columns: Vec<String>,
    pub depth: usize,
    pub leaves: usize,
    pub train: TrainReport,
    pub test: TrainReport,
    pub audit: Vec<RoundAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub test_clips: Vec<String>,
    pub kinds: Vec<KindReport>,
}

/// Clip indices held out from training.
pub fn held_out(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut test: Vec<usize> = idx.into_iter().take(k).collect();
    test.sort_unstable();
    test
}

struct Labeled {
    vectors: Vec<FeatureVector>,
    classes: Vec<i32>,
    /// Reserve feature values, aligned with `vectors`.
    reserve: BTreeMap<String, Vec<bool>>,
}

fn load_labels(run: &mut RunDir, cfg: &RunConfig, clips: &[(String, LayoutClip)], pool: &FeaturePool) -> CmdResult<Vec<Labeled>> {
    let files = run.read_dir(LABELS, ".jsonl", "annotate")?;
    if files.len() != clips.len() {
        return Err(CliError::Runtime(format!("{LABELS} has {} files for {} clips; rerun annotate", files.len(), clips.len())));
    }
    let reserve: Vec<FeatureDef> = reserve_features().into_iter().filter(|f| !pool.contains(&f.name)).collect();
    files
        .iter()
        .zip(clips)
        .map(|((rel, text), (stem, clip))| {
            if !rel.ends_with(&format!("/{stem}.jsonl")) {
                return Err(CliError::Runtime(format!("{rel} does not belong to clip file {stem}")));
            }
            let frag = fragment_clip(clip, &cfg.opc.fragment_policy)?;
            let labeler = Labeler::new(clip, pool.thresholds);
            let mut out = Labeled { vectors: Vec::new(), classes: Vec::new(), reserve: BTreeMap::new() };
            for r in parse_label_jsonl(text)? {
                let pt = frag.points.get(r.epe_id).ok_or_else(|| CliError::Runtime(format!("{rel}: no point {}", r.epe_id)))?;
                out.vectors.push(r.to_vector(pool, pt.kind)?);
                out.classes.push(r.result);
                for f in &reserve {
                    out.reserve.entry(f.name.clone()).or_default().push(labeler.feature(pt, &f.name)?);
                }
            }
            Ok(out)
        })
        .collect()
}

fn split_set(labeled: &[&Labeled], pool: &FeaturePool, kind: PointKind) -> (LabeledSet, BTreeMap<String, Vec<bool>>) {
    let vectors: Vec<FeatureVector> = labeled.iter().flat_map(|l| l.vectors.iter().cloned()).collect();
    let classes: Vec<i32> = labeled.iter().flat_map(|l| l.classes.iter().copied()).collect();
    let set = labeled_set(pool, &vectors, &classes, kind);
    let mut reserve: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for l in labeled {
        for (name, vals) in &l.reserve {
            let col = reserve.entry(name.clone()).or_default();
            col.extend(l.vectors.iter().zip(vals).filter(|(v, _)| v.kind == kind).map(|(_, b)| *b));
        }
    }
    (set, reserve)
}

/// `tree`: one tree per point kind with pool refresh rounds, plus reports.
pub fn tree(cfg: &RunConfig, out: &Path) -> CmdResult<(Manifest, TreeSummary)> {
    let mut run = open(out, "tree", cfg)?;
    let clips = load_clips(&mut run)?;
    if clips.len() < 2 {
        return Err(CliError::Validation(vec!["tree training needs at least two clips for a held-out split".into()]));
    }
    let pool: FeaturePool = serde_json::from_str(&run.read_string(POOL, "annotate")?)?;
    let labeled = load_labels(&mut run, cfg, &clips, &pool)?;
    let test_idx = held_out(clips.len(), cfg.test_fraction, cfg.seed);
    let (test, train): (Vec<(usize, &Labeled)>, Vec<(usize, &Labeled)>) =
        labeled.iter().enumerate().partition(|(i, _)| test_idx.contains(i));
    let train: Vec<&Labeled> = train.into_iter().map(|(_, l)| l).collect();
    let test: Vec<&Labeled> = test.into_iter().map(|(_, l)| l).collect();
    let protected: Vec<String> = TypeTag::ALL.iter().map(|t| t.column()).collect();
    let mut kinds = Vec::new();
    let mut final_names: Vec<String> = Vec::new();
    for kind in [PointKind::Epe, PointKind::Frag] {
        let (tr, tr_res) = split_set(&train, &pool, kind);
        let (te, te_res) = split_set(&test, &pool, kind);
        if tr.is_empty() {
            return Err(CliError::Runtime(format!("no {} points in the training split", kind.as_str())));
        }
        let mut source = TableSource { order: tr_res.keys().cloned().collect(), train: tr_res, test: te_res };
        // Reserve order follows the fixed draw order, not name order.
        let draw: Vec<String> = reserve_features().into_iter().map(|f| f.name).collect();
        source.order.sort_by_key(|n| draw.iter().position(|d| d == n));
        let classes = cfg.classes as i32;
        let outcome = self_improve(&tr, &te, kind, classes, &cfg.tree, cfg.improve_rounds, &protected, &mut source)?;
        let t = &outcome.tree;
        run.write(&tree_path(kind), (t.to_json()? + "\n").as_bytes())?;
        let imp = t.importance();
        let mut csv = String::from("feature,importance\n");
        for c in &t.columns {
            csv.push_str(&format!("{c},{}\n", imp[c]));
        }
        run.write(&importance_path(kind), csv.as_bytes())?;
        for c in &t.columns {
            if !protected.contains(c) && !final_names.contains(c) {
                final_names.push(c.clone());
            }
        }
        kinds.push(KindReport {
            kind,
            train_points: outcome.train.len(),
            test_points: outcome.test.len(),
            columns: t.columns.clone(),
            depth: t.depth(),
            leaves: t.leaves(),
            train: opcrecipe::recipes::evaluate(t, &outcome.train)?,
            test: opcrecipe::recipes::evaluate(t, &outcome.test)?,
            audit: outcome.audit,
        });
    }
    let mut known: Vec<FeatureDef> = pool.features.clone();
    known.extend(reserve_features());
    let final_pool = FeaturePool {
        types_description: pool.types_description.clone(),
        features: known.into_iter().filter(|f| final_names.contains(&f.name)).collect(),
        thresholds: pool.thresholds,
    };
    run.write(TREE_POOL, (serde_json::to_string_pretty(&final_pool)? + "\n").as_bytes())?;
    let summary = TreeSummary { test_clips: test_idx.iter().map(|&i| clips[i].1.id.clone()).collect(), kinds };
    run.write(TREE_REPORT, (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    Ok((run.finish()?, summary))
}

fn naming_for(pool: &FeaturePool) -> Naming {
    let mut n = Naming::default();
    for f in &pool.features {
        n.tokens.entry(f.name.clone()).or_insert_with(|| f.name.clone());
    }
    n
}

/// `emit`: rule list and downstream script from the two trees.
pub fn emit(cfg: &RunConfig, out: &Path) -> CmdResult<(Manifest, Vec<RecipeRule>)> {
    let mut run = open(out, "emit", cfg)?;
    let pool: FeaturePool = serde_json::from_str(&run.read_string(TREE_POOL, "tree")?)?;
    let columns = column_names(&pool);
    let mut rules = Vec::new();
    for kind in [PointKind::Epe, PointKind::Frag] {
        let t = DecisionTree::from_json(&run.read_string(&tree_path(kind), "tree")?)?;
        rules.extend(emit_rules(&t));
    }
    validate_rules(&rules, &columns, cfg.classes as i32)?;
    run.write(RULES, emit_jsonl(&rules).as_bytes())?;
    run.write(SCRIPT, emit_downstream(&rules, cfg.classes as i32, &naming_for(&pool))?.as_bytes())?;
    Ok((run.finish()?, rules))
}

/// `apply`: OPC with recipe-adjusted points; no policy network is involved.
/// `recipe` overrides the rule file of the run.
pub fn apply(cfg: &RunConfig, out: &Path, recipe: Option<&Path>) -> CmdResult<(Manifest, VariantRun)> {
    let mut run = open(out, "apply", cfg)?;
    let clips = load_clips(&mut run)?;
    let text = match recipe {
        Some(p) => std::fs::read_to_string(p).map_err(|_| CliError::Missing { path: p.to_path_buf(), producer: "emit" })?,
        None => run.read_string(RULES, "emit")?,
    };
    let rules = parse_jsonl(&text)?;
    let pool: FeaturePool = if rules.is_empty() {
        builtin_pool()
    } else {
        serde_json::from_str(&run.read_string(TREE_POOL, "tree")?)?
    };
    validate_rules(&rules, &column_names(&pool), cfg.classes as i32)?;
    let step = cfg.ppo.step_nm();
    let vr = run_variant(&mut run, cfg, Variant::OpcLlm, &clips, |_, prep| {
        let classes = recipe_classes(&rules, &pool, &prep.clip, &prep.fragmentation)?;
        Ok(apply_recipe_points(&prep.fragmentation.points, &classes, step)?)
    })?;
    Ok((run.finish()?, vr))
}

/// `report`: ratio table over whichever variants have metrics.
pub fn report(cfg: &RunConfig, out: &Path) -> CmdResult<(Manifest, ComparisonTable)> {
    let mut run = open(out, "report", cfg)?;
    let mut variants = Vec::new();
    for v in Variant::ALL {
        let rel = metrics_path(v);
        if v == Variant::Opc || run.path(&rel).exists() {
            variants.push((v, read_metrics(&run.read(&rel, "opc")?)?));
        }
    }
    let table = suite_comparison(&variants, cfg.record_runtime);
    run.write(REPORT, table.to_csv().as_bytes())?;
    Ok((run.finish()?, table))
}

fn xor_grid(a: &BinaryGrid, b: &BinaryGrid) -> BinaryGrid {
    let mut g: BinaryGrid = Grid::filled(a.width, a.height, a.pixel_nm, false);
    for y in 0..a.height {
        for x in 0..a.width {
            g.set(x, y, a.get(x, y) != b.get(x, y));
        }
    }
    g
}

/// `svg`: overlays of target, mask, points, printed image and PV band.
pub fn svg(cfg: &RunConfig, out: &Path, variant: Variant) -> CmdResult {
    let mut run = open(out, "svg", cfg)?;
    let clips = load_clips(&mut run)?;
    let producer = match variant {
        Variant::Opc => "opc",
        Variant::OpcRl => "rl-train",
        Variant::OpcLlm => "apply",
    };
    let eng = engine(cfg)?;
    let dir = masks_dir(variant);
    for (stem, clip) in &clips {
        let mask = parse_layout(&run.read_string(&format!("{dir}/{stem}.clip"), producer)?)?;
        let points: Vec<ControlPoint> = serde_json::from_str(&run.read_string(&format!("{dir}/{stem}.points.json"), producer)?)?;
        let prep = eng.prepare(clip)?;
        let ev = eng.evaluate(&prep, &mask.polygons)?;
        let band = xor_grid(&ev.corners.max, &ev.corners.min);
        let overlay = SvgOverlay { points: &points, mask: Some(&mask), printed: Some(&ev.corners.nominal), pvb: Some(&band) };
        run.write(&format!("svg/{}/{stem}.svg", variant.as_str().replace('+', "_")), render_svg(clip, &overlay).as_bytes())?;
    }
    run.finish()
}

/// Stages run by `run-all` for a variant.
pub fn stages(variant: Variant) -> &'static [&'static str] {
    match variant {
        Variant::Opc => &["opc", "report", "svg"],
        Variant::OpcRl => &["opc", "rl-train", "report", "svg"],
        Variant::OpcLlm => &["opc", "rl-train", "annotate", "tree", "emit", "apply", "report", "svg"],
    }
}

/// `run-all`: layouts (generated, or ingested from `inputs`) through every stage of the variant.
pub fn run_all(cfg: &RunConfig, out: &Path, inputs: &[PathBuf]) -> CmdResult<Vec<Manifest>> {
    let mut manifests = vec![if inputs.is_empty() { gen(cfg, out)? } else { ingest(cfg, out, inputs)? }];
    let cfg = &if inputs.is_empty() {
        cfg.clone()
    } else {
        serde_json::from_str::<RunConfig>(&std::fs::read_to_string(out.join(CONFIG))?)?
    };
    for stage in stages(cfg.variant) {
        log::info!("stage {stage}");
        manifests.push(match *stage {
            "opc" => opc(cfg, out)?.0,
            "rl-train" => rl_train(cfg, out)?.0,
            "annotate" => annotate(cfg, out)?,
            "tree" => tree(cfg, out)?.0,
            "emit" => emit(cfg, out)?.0,
            "apply" => apply(cfg, out, None)?.0,
            "report" => report(cfg, out)?.0,
            "svg" => svg(cfg, out, cfg.variant)?,
            _ => unreachable!(),
        });
    }
    Ok(manifests)
}

