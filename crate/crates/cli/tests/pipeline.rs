use std::path::Path;

use opcrecipe::rl::policy_forward_count;
use opcrecipe_cli::pipeline::{self, read_metrics};
use opcrecipe_cli::rundir;
use opcrecipe_cli::{main_with_args, CliError, RunConfig};

fn small() -> RunConfig {
    let mut cfg = RunConfig { clips: 3, ..RunConfig::default() };
    cfg.ppo.updates = 1;
    cfg.ppo.hidden = vec![8];
    cfg.env.train_iters = 2;
    cfg.env.window_px = 8;
    cfg.opc.max_iters = 4;
    cfg
}

fn args(v: &[&str]) -> Vec<String> {
    std::iter::once("opcrecipe").chain(v.iter().copied()).map(String::from).collect()
}

fn same_metrics(a: &Path, b: &Path) {
    let a = read_metrics(&std::fs::read(a).unwrap()).unwrap();
    let b = read_metrics(&std::fs::read(b).unwrap()).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((&x.clip_id, x.pvb, x.epe_n, x.epe_d, x.l2, x.loss_total), (&y.clip_id, y.pvb, y.epe_n, y.epe_d, y.l2, y.loss_total));
    }
}

#[test]
fn empty_recipe_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    pipeline::gen(&cfg, dir.path()).unwrap();
    pipeline::opc(&cfg, dir.path()).unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let before = policy_forward_count();
    pipeline::apply(&cfg, dir.path(), Some(&empty)).unwrap();
    assert_eq!(policy_forward_count(), before);
    same_metrics(&dir.path().join("metrics/opc.csv"), &dir.path().join("metrics/opc+llm.csv"));
}

#[test]
fn missing_artifacts_name_their_producer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    match pipeline::opc(&cfg, dir.path()) {
        Err(e @ CliError::Missing { producer: "gen", .. }) => {
            assert_eq!(e.exit_code(), 2);
            assert!(e.to_string().contains("opcrecipe gen"));
        }
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("expected an error"),
    }
    pipeline::gen(&cfg, dir.path()).unwrap();
    assert!(matches!(pipeline::annotate(&cfg, dir.path()), Err(CliError::Missing { producer: "rl-train", .. })));
    assert!(matches!(pipeline::emit(&cfg, dir.path()), Err(CliError::Missing { producer: "tree", .. })));
}

#[test]
fn full_chain_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = small();
    let manifests = pipeline::run_all(&cfg, out, &[]).unwrap();
    assert_eq!(manifests.len(), 1 + pipeline::stages(cfg.variant).len());
    for rel in [
        rundir::CONFIG,
        rundir::CHECKPOINT,
        rundir::REWARD_TRACE,
        rundir::MOVEMENTS,
        rundir::POOL,
        rundir::PROVENANCE,
        rundir::TREE_POOL,
        rundir::TREE_REPORT,
        "trees/epe.json",
        "trees/frag.json",
        "trees/importance_epe.csv",
        rundir::RULES,
        rundir::SCRIPT,
        "metrics/opc.csv",
        "metrics/opc+rl.csv",
        "metrics/opc+llm.csv",
        rundir::REPORT,
        "manifests/run-all.json",
    ]
    .iter()
    .filter(|r| !r.starts_with("manifests/run-all"))
    {
        assert!(out.join(rel).exists(), "{rel}");
    }
    for m in ["gen", "opc", "rl-train", "annotate", "tree", "emit", "apply", "report", "svg"] {
        assert!(out.join(format!("manifests/{m}.json")).exists(), "{m}");
    }
    assert_eq!(std::fs::read_dir(out.join("svg/opc_llm")).unwrap().count(), 3);
    let report = std::fs::read_to_string(out.join(rundir::REPORT)).unwrap();
    assert!(report.starts_with("metric,OPC,OPC+LLM,OPC+RL\n"), "{report}");
    let script = std::fs::read_to_string(out.join(rundir::SCRIPT)).unwrap();
    assert!(script.starts_with("# opc recipe:"));
}

#[test]
fn ingest_round_trips_generated_layouts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small();
    pipeline::gen(&cfg, a.path()).unwrap();
    let m = pipeline::ingest(&cfg, b.path(), &[a.path().join(rundir::CLIPS)]).unwrap();
    assert_eq!(m.outputs.len(), 4);
    let bad = a.path().join("bad.clip");
    std::fs::write(&bad, "CLIP x 10 10\nPOLY 0 0 5\n").unwrap();
    match pipeline::ingest(&cfg, b.path(), &[bad]) {
        Err(CliError::Validation(v)) => assert_eq!(v.len(), 1),
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("expected a validation error"),
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(main_with_args(args(&["opc"])), 1);
    assert_eq!(main_with_args(args(&["frobnicate"])), 1);
    assert_eq!(main_with_args(args(&["gen", "--out", out, "--workers", "0"])), 2);
    assert_eq!(main_with_args(args(&["opc", "--out", out])), 2);
    let cfg_path = dir.path().join("cfg.json");
    let mut cfg = small();
    cfg.clips = 1;
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();
    let c = cfg_path.to_str().unwrap();
    assert_eq!(main_with_args(args(&["gen", "--out", out, "--config", c])), 0);
    assert_eq!(main_with_args(args(&["opc", "--out", out])), 0);
    // A corrupt layout is a runtime failure of the command reading it.
    let clip = std::fs::read_dir(dir.path().join(rundir::CLIPS)).unwrap().next().unwrap().unwrap().path();
    std::fs::write(&clip, "not a layout").unwrap();
    assert_eq!(main_with_args(args(&["opc", "--out", out])), 2);
    assert_eq!(main_with_args(args(&["annotate", "--out", out, "--mode", "psychic"])), 1);
}

#[test]
fn flags_override_the_saved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, small().to_json()).unwrap();
    let c = cfg_path.to_str().unwrap();
    assert_eq!(main_with_args(args(&["gen", "--out", out, "--config", c, "--clips", "2", "--seed", "9"])), 0);
    let saved: RunConfig = serde_json::from_str(&std::fs::read_to_string(dir.path().join(rundir::CONFIG)).unwrap()).unwrap();
    assert_eq!((saved.clips, saved.seed), (2, 9));
    assert_eq!(std::fs::read_dir(dir.path().join(rundir::CLIPS)).unwrap().count(), 2);
}
