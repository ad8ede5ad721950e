use serde::{Deserialize, Serialize};

use super::nn::ActorCritic;
use super::ppo::{PolicyCheckpoint, PpoConfig};
use super::{Environment, Episode, Observation, RlError, StepOutcome};
use crate::features::MovementRecord;
use crate::geometry::{corner_kind, ClipFragmentation, ControlPoint, CornerKind, LayoutClip, PointKind, MAX_OFFSET_NM};
use crate::opc::{OpcEngine, PreparedClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpcEnvConfig {
    /// Side of the square raster window around each point, in pixels.
    pub window_px: usize,
    pub window_pixel_nm: f64,
    /// Correction iterations per reward evaluation.
    pub train_iters: usize,
    /// Rewards are `-reward_scale * loss / baseline_loss`.
    pub reward_scale: f64,
    /// Loss ratio charged when a move breaks the mask geometry.
    pub failure_loss_ratio: f64,
}

impl Default for OpcEnvConfig {
    fn default() -> Self {
        Self { window_px: 32, window_pixel_nm: 8.0, train_iters: 8, reward_scale: 0.01, failure_loss_ratio: 5.0 }
    }
}

impl OpcEnvConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if self.window_px == 0 || !(self.window_pixel_nm > 0.0) || self.train_iters == 0 {
            return Err(RlError::Config("window and train_iters must be positive".into()));
        }
        if !(self.reward_scale > 0.0) || !(self.failure_loss_ratio >= 0.0) {
            return Err(RlError::Config("reward_scale must be positive".into()));
        }
        Ok(())
    }
}

const DESCRIPTOR_LEN: usize = 15;

/// Fixed-length policy input for each control point of one clip.
#[derive(Debug, Clone)]
pub struct PointEncoder {
    /// Raster window followed by the static descriptor; dynamic slots are zero.
    static_part: Vec<Vec<f64>>,
    /// Index of the previous point when it sits on the same edge.
    prev_same_edge: Vec<Option<usize>>,
}

impl PointEncoder {
    pub fn dim(cfg: &OpcEnvConfig) -> usize {
        cfg.window_px * cfg.window_px + DESCRIPTOR_LEN
    }

    pub fn new(clip: &LayoutClip, frag: &ClipFragmentation, cfg: &OpcEnvConfig) -> Self {
        let pts = &frag.points;
        let mut static_part = Vec::with_capacity(pts.len());
        let mut prev_same_edge = Vec::with_capacity(pts.len());
        let mut i = 0;
        while i < pts.len() {
            let mut j = i;
            while j < pts.len() && pts[j].polygon == pts[i].polygon && pts[j].edge == pts[i].edge {
                j += 1;
            }
            for k in i..j {
                static_part.push(Self::static_features(clip, frag, &pts[k], k - i, j - 1 - k, cfg));
                prev_same_edge.push((k > i).then(|| k - 1));
            }
            i = j;
        }
        Self { static_part, prev_same_edge }
    }

    fn static_features(
        clip: &LayoutClip,
        frag: &ClipFragmentation,
        pt: &ControlPoint,
        from_start: usize,
        from_end: usize,
        cfg: &OpcEnvConfig,
    ) -> Vec<f64> {
        let poly = &clip.polygons[pt.polygon];
        let e = poly.edge(pt.edge);
        let s = pt.arclength_nm as f64;
        let len = e.length_nm as f64;
        let (px, py) = e.point_at(s);
        let (tx, ty) = e.direction.unit_f64();
        let (nx, ny) = e.outward_normal.unit_f64();
        let w = cfg.window_px;
        let half = w as f64 / 2.0 - 0.5;
        let mut out = Vec::with_capacity(Self::dim(cfg));
        for j in 0..w {
            let v = (j as f64 - half) * cfg.window_pixel_nm;
            for i in 0..w {
                let u = (i as f64 - half) * cfg.window_pixel_nm;
                let inside = clip.contains(px + u * tx + v * nx, py + u * ty + v * ny);
                out.push(if inside { 1.0 } else { 0.0 });
            }
        }
        let sign = |b: bool| if b { 1.0 } else { -1.0 };
        let n = poly.len();
        let fe = frag.edge(pt.polygon, pt.edge);
        out.extend_from_slice(&[
            sign(pt.kind == PointKind::Epe),
            sign(ty == 0.0),
            px / clip.width_nm as f64 - 0.5,
            py / clip.height_nm as f64 - 0.5,
            if len > 0.0 { s / len } else { 0.0 },
            s.min(200.0) / 200.0,
            (len - s).min(200.0) / 200.0,
            len.min(500.0) / 500.0,
            sign(corner_kind(poly, pt.edge) == CornerKind::Convex),
            sign(corner_kind(poly, (pt.edge + 1) % n) == CornerKind::Convex),
            (from_start / 2).min(3) as f64 / 3.0,
            (from_end / 2).min(3) as f64 / 3.0,
            if fe.degenerate { 1.0 } else { 0.0 },
            0.0,
            0.0,
        ]);
        out
    }

    pub fn len(&self) -> usize {
        self.static_part.len()
    }

    pub fn is_empty(&self) -> bool {
        self.static_part.is_empty()
    }

    /// Encoding of point `i` given the current offsets of all points.
    pub fn encode(&self, i: usize, points: &[ControlPoint]) -> Vec<f64> {
        let mut v = self.static_part[i].clone();
        let n = v.len();
        let scale = MAX_OFFSET_NM as f64;
        v[n - 2] = points[i].tangential_offset_nm as f64 / scale;
        v[n - 1] = self.prev_same_edge[i].map_or(0.0, |p| points[p].tangential_offset_nm as f64 / scale);
        v
    }
}

struct EnvClip {
    prep: PreparedClip,
    encoder: PointEncoder,
    baseline_loss: f64,
}

/// One episode per clip: a clockwise pass assigning a class to each control point.
pub struct OpcEnv {
    engine: OpcEngine,
    cfg: OpcEnvConfig,
    classes: usize,
    step_nm: i64,
    gamma: f64,
    clips: Vec<EnvClip>,
}

impl OpcEnv {
    /// `engine` supplies the lithography and metric settings; its iteration
    /// count is replaced by `cfg.train_iters`.
    pub fn new(clips: &[LayoutClip], engine: &OpcEngine, cfg: &OpcEnvConfig, ppo: &PpoConfig) -> Result<Self, RlError> {
        cfg.validate()?;
        ppo.validate()?;
        let mut opc = engine.opc.clone();
        opc.max_iters = cfg.train_iters;
        let engine = OpcEngine::new(engine.sim.cfg.clone(), engine.metrics.clone(), opc)?;
        let clips = clips
            .iter()
            .map(|c| {
                let prep = engine.prepare(c)?;
                let baseline = engine.run_baseline(&prep)?.evaluation.loss.total;
                let encoder = PointEncoder::new(c, &prep.fragmentation, cfg);
                Ok(EnvClip { prep, encoder, baseline_loss: baseline.max(1e-9) })
            })
            .collect::<Result<Vec<_>, RlError>>()?;
        Ok(Self { engine, cfg: cfg.clone(), classes: ppo.classes, step_nm: ppo.step_nm(), gamma: ppo.discount_gamma, clips })
    }

    pub fn config(&self) -> &OpcEnvConfig {
        &self.cfg
    }

    pub fn baseline_loss(&self, clip: usize) -> f64 {
        self.clips[clip].baseline_loss
    }

    /// Greedy placements for every clip.
    pub fn extract(&self, ckpt: &PolicyCheckpoint) -> Result<Vec<ClipMovements>, RlError> {
        self.clips
            .iter()
            .map(|c| greedy(&ckpt.net, &ckpt.config, &c.encoder, &c.prep.clip, &c.prep.fragmentation))
            .collect()
    }
}

impl Environment for OpcEnv {
    fn policy_dim(&self) -> usize {
        PointEncoder::dim(&self.cfg)
    }

    fn value_dim(&self) -> usize {
        DESCRIPTOR_LEN + 4
    }

    fn num_actions(&self) -> usize {
        2 * self.classes + 1
    }

    fn num_episodes(&self) -> usize {
        self.clips.len()
    }

    fn start(&self, episode: usize) -> Result<Box<dyn Episode + '_>, RlError> {
        let clip = self.clips.get(episode).ok_or_else(|| RlError::Env(format!("no episode {episode}")))?;
        Ok(Box::new(OpcEpisode { env: self, clip, points: clip.prep.fragmentation.points.clone(), t: 0, loss_ratio: 1.0 }))
    }
}

struct OpcEpisode<'a> {
    env: &'a OpcEnv,
    clip: &'a EnvClip,
    points: Vec<ControlPoint>,
    t: usize,
    loss_ratio: f64,
}

impl Episode for OpcEpisode<'_> {
    fn observe(&self) -> Observation {
        let horizon = self.points.len();
        let t = self.t.min(horizon.saturating_sub(1));
        let policy = self.clip.encoder.encode(t, &self.points);
        // The critic sees the point descriptor (no raster) plus time left and the current loss level.
        let remaining = 1.0 - self.env.gamma.powi((horizon - self.t) as i32);
        let mut value = policy[policy.len() - DESCRIPTOR_LEN..].to_vec();
        value.extend_from_slice(&[self.t as f64 / horizon as f64, remaining, self.loss_ratio, self.loss_ratio * remaining]);
        Observation { policy, value }
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, RlError> {
        if self.t >= self.points.len() {
            return Err(RlError::Env("step after the end of the episode".into()));
        }
        if action > 2 * self.env.classes {
            return Err(RlError::Env(format!("action {action} out of range")));
        }
        let class = action as i64 - self.env.classes as i64;
        let nominal = self.clip.prep.fragmentation.points[self.t];
        self.points[self.t] = nominal.with_offset(class * self.env.step_nm).map_err(|e| RlError::Env(e.to_string()))?;
        self.t += 1;
        let failure = StepOutcome { reward: -self.env.cfg.reward_scale * self.env.cfg.failure_loss_ratio, done: true };
        let result = match self.env.engine.run(&self.clip.prep, &self.points) {
            Ok(r) => r,
            Err(crate::opc::OpcError::Geometry(_)) => return Ok(failure),
            Err(e) => return Err(e.into()),
        };
        if result.aborted.is_some() {
            return Ok(failure);
        }
        self.loss_ratio = result.evaluation.loss.total / self.clip.baseline_loss;
        Ok(StepOutcome { reward: -self.env.cfg.reward_scale * self.loss_ratio, done: self.t == self.points.len() })
    }
}

/// Greedy placements for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMovements {
    pub clip_id: String,
    pub points: Vec<ControlPoint>,
    pub records: Vec<MovementRecord>,
}

impl ClipMovements {
    pub fn classes(&self) -> Vec<i32> {
        self.records.iter().map(|r| r.class).collect()
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn greedy(
    net: &ActorCritic,
    ppo: &PpoConfig,
    encoder: &PointEncoder,
    clip: &LayoutClip,
    frag: &ClipFragmentation,
) -> Result<ClipMovements, RlError> {
    if net.policy.input_dim() != encoder.static_part.first().map_or(0, Vec::len) {
        return Err(RlError::Checkpoint("policy input size does not match the encoder".into()));
    }
    let mut points = frag.points.clone();
    let mut records = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let logits = net.policy_tape(&encoder.encode(i, &points)).output().to_vec();
        let class = ppo.class_of_action(argmax(&logits));
        points[i] = frag.points[i].with_offset(i64::from(class) * ppo.step_nm()).map_err(|e| RlError::Env(e.to_string()))?;
        // Records keep the chosen move even when the edge clamps the position.
        records.push(MovementRecord::new(points[i].id, points[i].kind, i64::from(class) * ppo.step_nm(), ppo.classes as i32)?);
    }
    Ok(ClipMovements { clip_id: clip.id.clone(), points, records })
}

/// Greedy (argmax) movements for a clip under a trained policy. No lithography is run.
pub fn extract_movements(ckpt: &PolicyCheckpoint, env_cfg: &OpcEnvConfig, clip: &LayoutClip, frag: &ClipFragmentation) -> Result<ClipMovements, RlError> {
    let encoder = PointEncoder::new(clip, frag, env_cfg);
    greedy(&ckpt.net, &ckpt.config, &encoder, clip, frag)
}

/// Fixed-horizon test environment that pays 1 for the zero class and 0 otherwise.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub obs_dim: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub classes: usize,
}

impl BanditEnv {
    pub fn new(classes: usize) -> Self {
        Self { obs_dim: 8, horizon: 16, episodes: 4, classes }
    }

    fn obs(&self, ep: usize, t: usize) -> Vec<f64> {
        (0..self.obs_dim).map(|k| ((ep * self.horizon + t + 1) as f64 * (k + 1) as f64 * 0.37).sin()).collect()
    }
}

impl Environment for BanditEnv {
    fn policy_dim(&self) -> usize {
        self.obs_dim
    }

    fn value_dim(&self) -> usize {
        self.obs_dim + 1
    }

    fn num_actions(&self) -> usize {
        2 * self.classes + 1
    }

    fn num_episodes(&self) -> usize {
        self.episodes
    }

    fn start(&self, episode: usize) -> Result<Box<dyn Episode + '_>, RlError> {
        Ok(Box::new(BanditEpisode { env: self, ep: episode, t: 0 }))
    }
}

struct BanditEpisode<'a> {
    env: &'a BanditEnv,
    ep: usize,
    t: usize,
}

impl Episode for BanditEpisode<'_> {
    fn observe(&self) -> Observation {
        let policy = self.env.obs(self.ep, self.t);
        let mut value = policy.clone();
        value.push(self.t as f64 / self.env.horizon as f64);
        Observation { policy, value }
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, RlError> {
        let reward = if action == self.env.classes { 1.0 } else { 0.0 };
        self.t += 1;
        Ok(StepOutcome { reward, done: self.t >= self.env.horizon })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fragment_clip, FragmentPolicy, Polygon};
    use crate::litho::LithoConfig;
    use crate::metrics::MetricsConfig;
    use crate::opc::OpcConfig;
    use crate::rl::nn::softmax;

    fn small_env() -> OpcEnv {
        let clip = LayoutClip::new("line", 512, 512, vec![Polygon::rect(226, 150, 286, 362).unwrap()]).unwrap();
        let engine = OpcEngine::new(LithoConfig::default(), MetricsConfig::default(), OpcConfig::default()).unwrap();
        OpcEnv::new(&[clip], &engine, &OpcEnvConfig::default(), &PpoConfig::default()).unwrap()
    }

    #[test]
    fn encoder_window_sees_the_inside_below_the_edge() {
        let clip = LayoutClip::new("sq", 512, 512, vec![Polygon::rect(100, 100, 400, 400).unwrap()]).unwrap();
        let frag = fragment_clip(&clip, &FragmentPolicy::default()).unwrap();
        let cfg = OpcEnvConfig::default();
        let enc = PointEncoder::new(&clip, &frag, &cfg);
        assert_eq!(enc.len(), frag.points.len());
        // A mid-edge point: lower half of the window (inward) is filled, upper half empty.
        let mid = frag.points.iter().position(|p| p.edge == 0 && p.kind == PointKind::Epe && p.arclength_nm > 100).unwrap();
        let v = enc.encode(mid, &frag.points);
        assert_eq!(v.len(), PointEncoder::dim(&cfg));
        let w = cfg.window_px;
        assert_eq!(v[w / 2 - 1 + w * 3], 1.0);
        assert_eq!(v[w / 2 + w * (w - 3)], 0.0);
    }

    #[test]
    fn zero_action_reproduces_the_baseline() {
        let env = small_env();
        let mut ep = env.start(0).unwrap();
        let before = ep.observe();
        let out = ep.step(4).unwrap();
        assert!((out.reward + env.config().reward_scale).abs() < 1e-12);
        let after = ep.observe();
        assert_eq!(before.policy.len(), after.policy.len());
        assert!(!out.done);
    }

    #[test]
    fn full_class_moves_forty_nm() {
        let env = small_env();
        let mut ep = OpcEpisode { env: &env, clip: &env.clips[0], points: env.clips[0].prep.fragmentation.points.clone(), t: 1, loss_ratio: 1.0 };
        // Point 1 is a fragment boundary 40 nm from the corner; +C moves it 40 nm along the edge.
        ep.step(8).unwrap();
        assert_eq!(ep.points[1].tangential_offset_nm, 40);
    }

    #[test]
    fn greedy_extraction_uses_argmax() {
        let env = small_env();
        let cfg = PpoConfig::default();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let mut net = ActorCritic::new(env.policy_dim(), env.value_dim(), &[8], cfg.num_actions(), &mut rng);
        // Bias the output toward class +1.
        let off = net.policy.output_bias_offset();
        net.policy.params[off + cfg.action_of_class(1)] = 50.0;
        let ckpt = PolicyCheckpoint { version: PolicyCheckpoint::VERSION, config: cfg.clone(), net, stats: vec![], aborted: None };
        let moves = env.extract(&ckpt).unwrap();
        for r in &moves[0].records {
            assert_eq!(r.class, 1);
            assert_eq!(r.delta_nm(), 10);
        }
        let probs = softmax(ckpt.net.policy.forward(&env.clips[0].encoder.encode(0, &moves[0].points)).output());
        assert!(probs[cfg.action_of_class(1)] > 0.99);
    }
}
