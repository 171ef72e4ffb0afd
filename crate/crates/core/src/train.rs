//! Actor-critic training across concurrent workers sharing one parameter
//! store, the supervised baseline trainer, and the finite-difference
//! gradient check.

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::{ground_truth_sets, run_episode, EpisodeTape, Sampled};
use crate::error::{Error, Result};
use crate::net::{
    self, backward, checkpoint, forward_taped, quantize_bearing, Gradients, HeadGrad, LstmState, NetOutput, NetParams, Real,
    RmsProp, RmsPropConfig, Tape, Tensor, N_DIRECTIONS, TENSORS,
};
use crate::pandata::{derive_scanpath, extract_fov, Frame, HMTrace};
use crate::reward::{evaluate, GroundTruthSet, RewardParams};
use crate::rng::{stream_rng, Rng};
use crate::sphere::{ArcLen, GeoPos};

/// `G_t = r_t + gamma * G_{t+1}` with `G_T = 0`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// What the actor-critic objective needs to know about one step besides the
/// network output: the action taken, its return, the advantage (held
/// constant) and the slope of the magnitude reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cTarget {
    pub action: usize,
    pub ret: f64,
    pub advantage: f64,
    pub dnu_dmag: f64,
}

fn entropy(policy: &[f64; N_DIRECTIONS]) -> f64 {
    -policy.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Per-step loss `½(G - V)² - A log π(a) - β H(π) - r_nu`, where `r_nu`
/// is supplied already evaluated at the step's magnitude.
pub fn a2c_step_loss<F: Real>(out: &NetOutput<F>, target: &A2cTarget, r_nu: f64, beta: f64) -> f64 {
    let pi: [f64; N_DIRECTIONS] = out.policy.map(|p| p.as_f64());
    let v = out.value.as_f64();
    0.5 * (target.ret - v).powi(2) - target.advantage * pi[target.action].ln() - beta * entropy(&pi) - r_nu
}

/// Gradient of [`a2c_step_loss`] with respect to the step's logits, value
/// and magnitude.
pub fn a2c_head_grad<F: Real>(policy: &[F; N_DIRECTIONS], value: F, target: &A2cTarget, beta: f64) -> HeadGrad<F> {
    let pi: [f64; N_DIRECTIONS] = policy.map(|p| p.as_f64());
    let h = entropy(&pi);
    let mut d_logits = [F::zero(); N_DIRECTIONS];
    for k in 0..N_DIRECTIONS {
        let onehot = if k == target.action { 1.0 } else { 0.0 };
        let log_p = if pi[k] > 0.0 { pi[k].ln() } else { 0.0 };
        d_logits[k] = F::lit(target.advantage * (pi[k] - onehot) + beta * pi[k] * (log_p + h));
    }
    HeadGrad { d_logits, d_value: F::lit(value.as_f64() - target.ret), d_magnitude: F::lit(-target.dnu_dmag) }
}

/// Returns, advantages and head gradients for a finished episode.
pub fn episode_head_grads(tape: &EpisodeTape, gamma: f64, beta: f64) -> (Vec<HeadGrad<f32>>, f64) {
    let rewards: Vec<f64> = tape.steps.iter().map(|s| s.r_alpha).collect();
    let returns = discounted_returns(&rewards, gamma);
    let mut value_loss = 0.0;
    let heads = tape
        .steps
        .iter()
        .zip(&returns)
        .map(|(s, &g)| {
            let adv = g - s.value as f64;
            value_loss += 0.5 * adv * adv;
            let target = A2cTarget { action: s.action, ret: g, advantage: adv, dnu_dmag: s.dnu_dmag };
            a2c_head_grad(&s.policy, s.value, &target, beta)
        })
        .collect();
    (heads, value_loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub workers: usize,
    pub gamma: f64,
    pub rmsprop: RmsPropConfig,
    pub entropy_beta: f64,
    pub epsilon: f64,
    pub nu_max: f64,
    /// Total episodes across all workers.
    pub episodes: u64,
    pub seed: u64,
    pub rewards: RewardParams,
    /// Act on every `frame_stride`-th frame.
    pub frame_stride: usize,
    /// Truncate episodes to this many steps; 0 means the whole video.
    pub max_episode_steps: usize,
    /// Rescale each episode gradient to at most this L2 norm; 0 disables.
    pub grad_clip: f64,
    /// Write a checkpoint every this many updates; 0 disables.
    pub checkpoint_every: u64,
    /// Decay the learning rate linearly to zero over `episodes` updates.
    pub anneal_lr: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            gamma: 0.99,
            rmsprop: RmsPropConfig::default(),
            entropy_beta: 0.01,
            epsilon: 0.1,
            nu_max: 10.0,
            episodes: 100,
            seed: 0,
            rewards: RewardParams::default(),
            frame_stride: 1,
            max_episode_steps: 0,
            grad_clip: 0.0,
            checkpoint_every: 0,
            anneal_lr: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) && self.gamma != 0.0 {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.nu_max > 0.0) {
            return bad("nu_max must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.frame_stride == 0 {
            return bad("frame_stride must be at least 1");
        }
        if !(self.rmsprop.lr > 0.0 && self.rmsprop.eps > 0.0 && (0.0..1.0).contains(&self.rmsprop.decay)) {
            return bad("rmsprop settings out of range");
        }
        self.rewards.validate()
    }
}

/// One training video: frames plus every subject's trace.
#[derive(Debug, Clone)]
pub struct TrainingVideo {
    pub video_id: String,
    pub frames: Vec<Frame>,
    pub traces: Vec<HMTrace>,
}

/// A video prepared for episodes: subsampled frames and per-step ground truth.
struct Prepared {
    video_id: String,
    frames: Vec<Frame>,
    gt: Vec<GroundTruthSet>,
    traces: Vec<HMTrace>,
}

fn prepare(data: &[TrainingVideo], stride: usize, max_steps: usize) -> Result<Vec<Prepared>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    data.iter()
        .map(|v| {
            if v.traces.is_empty() {
                return Err(Error::InvalidInput(format!("video {} has no traces", v.video_id)));
            }
            let len = v.traces[0].len();
            if v.frames.len() < len {
                return Err(Error::InvalidInput(format!("video {}: {} frames but traces of {}", v.video_id, v.frames.len(), len)));
            }
            let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
            if max_steps > 0 {
                idx.truncate(max_steps + 1);
            }
            if idx.len() < 2 {
                return Err(Error::InvalidInput(format!("video {} too short for stride {stride}", v.video_id)));
            }
            let traces: Vec<HMTrace> = v
                .traces
                .iter()
                .map(|t| {
                    if t.len() != len {
                        return Err(Error::InvalidInput(format!("video {}: traces differ in length", v.video_id)));
                    }
                    HMTrace::new(t.video_id.clone(), t.subject_id.clone(), idx.iter().map(|&i| t.positions[i]).collect())
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&HMTrace> = traces.iter().collect();
            Ok(Prepared {
                video_id: v.video_id.clone(),
                frames: idx.iter().map(|&i| v.frames[i].clone()).collect(),
                gt: ground_truth_sets(&refs)?,
                traces,
            })
        })
        .collect()
}

struct StoreInner {
    params: Arc<NetParams<f32>>,
    opt: RmsProp<f32>,
    updates: u64,
    /// Learning rate falls linearly to zero over this many updates; 0 keeps it constant.
    anneal_over: u64,
}

/// Shared parameters. Readers take a complete snapshot; updates are applied
/// one at a time in arrival order.
pub struct GlobalStore {
    inner: Mutex<StoreInner>,
}

impl GlobalStore {
    pub fn new(params: NetParams<f32>, opt: RmsPropConfig) -> Self {
        Self { inner: Mutex::new(StoreInner { params: Arc::new(params), opt: RmsProp::new(opt), updates: 0, anneal_over: 0 }) }
    }

    /// Anneals the learning rate linearly to zero across `updates` updates.
    pub fn with_annealing(self, updates: u64) -> Self {
        self.inner.lock().unwrap().anneal_over = updates;
        self
    }

    /// Current parameters and the number of updates already applied.
    pub fn snapshot(&self) -> (Arc<NetParams<f32>>, u64) {
        let g = self.inner.lock().unwrap();
        (Arc::clone(&g.params), g.updates)
    }

    /// Applies one gradient and returns the new update count.
    pub fn apply(&self, grads: &Gradients<f32>) -> Result<u64> {
        self.apply_with(grads, |_, _| Ok(()))
    }

    /// As [`apply`](Self::apply), running `after` on the new parameters
    /// while still holding the lock.
    pub fn apply_with(&self, grads: &Gradients<f32>, after: impl FnOnce(&NetParams<f32>, u64) -> Result<()>) -> Result<u64> {
        let mut g = self.inner.lock().unwrap();
        let inner = &mut *g;
        let mut next = (*inner.params).clone();
        let mut lr = inner.opt.config.lr;
        if inner.anneal_over > 0 {
            lr *= 1.0 - (inner.updates.min(inner.anneal_over) as f64 / inner.anneal_over as f64);
        }
        inner.opt.apply_with_lr(&mut next, grads, lr)?;
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("parameters after update {}", inner.updates + 1)));
        }
        inner.updates += 1;
        inner.params = Arc::new(next);
        after(&inner.params, inner.updates)?;
        Ok(inner.updates)
    }

    pub fn updates(&self) -> u64 {
        self.inner.lock().unwrap().updates
    }

    pub fn into_params(self) -> NetParams<f32> {
        let inner = self.inner.into_inner().unwrap();
        Arc::try_unwrap(inner.params).unwrap_or_else(|a| (*a).clone())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub worker: usize,
    pub episode: u64,
    pub video_id: String,
    pub mean_r_alpha: f64,
    pub mean_r_nu: f64,
    pub value_loss: f64,
    pub steps: usize,
    pub wallclock: f64,
}

/// Where training writes its side outputs.
#[derive(Default)]
pub struct TrainSinks {
    /// JSON-lines episode log.
    pub log: Option<Box<dyn Write + Send>>,
    /// Directory for periodic checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub params: NetParams<f32>,
    pub log: Vec<EpisodeLog>,
}

/// Gradient and log entry of one worker episode.
type EpisodeFn<'a> = dyn Fn(u64, &NetParams<f32>) -> Result<(Gradients<f32>, EpisodeLog)> + Sync + 'a;

/// Runs `episodes` episodes over `workers` threads against one store.
/// Episode `e` is claimed from a shared counter; with one worker the
/// sequence of updates is fully determined by the seed.
fn run_workers(
    store: &GlobalStore,
    workers: usize,
    episodes: u64,
    checkpoint_every: u64,
    sinks: &mut TrainSinks,
    episode_fn: &EpisodeFn<'_>,
) -> Result<Vec<EpisodeLog>> {
    let next = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let logs = Mutex::new(Vec::new());
    let sink = Mutex::new(sinks.log.take());
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let started = Instant::now();
    let ckpt_dir = sinks.checkpoint_dir.clone();

    std::thread::scope(|s| {
        for w in 0..workers {
            let (next, stop, logs, sink, first_error, ckpt_dir) = (&next, &stop, &logs, &sink, &first_error, &ckpt_dir);
            s.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let e = next.fetch_add(1, Ordering::SeqCst);
                if e >= episodes {
                    break;
                }
                let (snapshot, _) = store.snapshot();
                let result = episode_fn(e, &snapshot).and_then(|(grads, mut entry)| {
                    store.apply_with(&grads, |p, version| {
                        if let Some(dir) = ckpt_dir {
                            if checkpoint_every > 0 && version % checkpoint_every == 0 {
                                checkpoint::save(p, &dir.join(format!("ckpt_{version:06}.bin")))?;
                            }
                        }
                        Ok(())
                    })?;
                    entry.worker = w;
                    entry.wallclock = started.elapsed().as_secs_f64();
                    Ok(entry)
                });
                match result {
                    Ok(entry) => {
                        log::debug!("episode {} r_alpha {:.4} r_nu {:.4}", entry.episode, entry.mean_r_alpha, entry.mean_r_nu);
                        if let Some(out) = sink.lock().unwrap().as_mut() {
                            let line = serde_json::to_string(&entry).expect("log entry serializes");
                            if let Err(err) = writeln!(out, "{line}") {
                                log::warn!("training log write failed: {err}");
                            }
                        }
                        logs.lock().unwrap().push(entry);
                    }
                    Err(err) => {
                        stop.store(true, Ordering::SeqCst);
                        first_error.lock().unwrap().get_or_insert(err);
                        break;
                    }
                }
            });
        }
    });

    if let Some(out) = sink.into_inner().unwrap().as_mut() {
        out.flush().map_err(|e| Error::io("training log", e))?;
    }
    if let Some(err) = first_error.into_inner().unwrap() {
        return Err(err);
    }
    let mut logs = logs.into_inner().unwrap();
    logs.sort_by_key(|l| l.episode);
    Ok(logs)
}

fn finish_grads(mut grads: Gradients<f32>, clip: f64, what: &str) -> Result<Gradients<f32>> {
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("{what} gradient")));
    }
    if clip > 0.0 {
        grads.clip_norm(clip);
    }
    Ok(grads)
}

/// Offline actor-critic training. Starts from `init` or from a fresh seeded
/// network.
pub fn train_offline(
    data: &[TrainingVideo],
    config: &TrainConfig,
    init: Option<NetParams<f32>>,
    sinks: &mut TrainSinks,
) -> Result<TrainOutcome> {
    config.validate()?;
    let videos = prepare(data, config.frame_stride, config.max_episode_steps)?;
    let params = init.unwrap_or_else(|| NetParams::init(config.nu_max, &mut stream_rng(config.seed, 0)));
    let store = GlobalStore::new(params, config.rmsprop).with_annealing(if config.anneal_lr { config.episodes } else { 0 });
    let episode_fn = |e: u64, snapshot: &NetParams<f32>| -> Result<(Gradients<f32>, EpisodeLog)> {
        let v = &videos[(e % videos.len() as u64) as usize];
        let mut rng = stream_rng(config.seed, 10_000 + e);
        let mut chooser = Sampled { eps: config.epsilon };
        let (tape, _) = run_episode(&v.frames, &v.gt, snapshot, &config.rewards, GeoPos::origin(), &mut chooser, true, &mut rng)?;
        let (heads, value_loss) = episode_head_grads(&tape, config.gamma, config.entropy_beta);
        if !value_loss.is_finite() {
            return Err(Error::NonFinite(format!("value loss in episode {e}")));
        }
        let grads = backward(snapshot, tape.net_tape.as_ref().expect("recorded"), &heads)?;
        let grads = finish_grads(grads, config.grad_clip, "episode")?;
        let entry = EpisodeLog {
            worker: 0,
            episode: e,
            video_id: v.video_id.clone(),
            mean_r_alpha: tape.mean_r_alpha(),
            mean_r_nu: tape.mean_r_nu(),
            value_loss,
            steps: tape.steps.len(),
            wallclock: 0.0,
        };
        Ok((grads, entry))
    };
    let log = run_workers(&store, config.workers, config.episodes, config.checkpoint_every, sinks, &episode_fn)?;
    let params = store.into_params();
    Ok(TrainOutcome { params, log })
}

/// Mean cross-entropy of the heading classifier plus mean squared error of
/// the magnitude regressor along one teacher-forced trace, with the
/// gradient of that loss. Uses the trace's positions as viewpoints.
pub fn supervised_loss(params: &NetParams<f32>, frames: &[Frame], trace: &HMTrace) -> Result<(f64, Gradients<f32>)> {
    let steps = derive_scanpath(trace)?;
    if frames.len() < steps.len() {
        return Err(Error::InvalidInput("fewer frames than trace steps".into()));
    }
    let n = steps.len() as f64;
    let mut tape = Tape::new();
    let mut state = LstmState::zeros();
    let mut loss = 0.0;
    let mut heads = Vec::with_capacity(steps.len());
    for (t, step) in steps.iter().enumerate() {
        let obs = extract_fov(&frames[t], trace.positions[t]);
        let out = forward_taped(params, obs.values(), &state, &mut tape);
        let class = quantize_bearing(step.dir);
        let err = out.magnitude as f64 - step.mag.deg();
        loss += (-(out.policy[class] as f64).ln() + err * err) / n;
        let mut d_logits = [0f32; N_DIRECTIONS];
        for k in 0..N_DIRECTIONS {
            let onehot = if k == class { 1.0 } else { 0.0 };
            d_logits[k] = ((out.policy[k] as f64 - onehot) / n) as f32;
        }
        heads.push(HeadGrad { d_logits, d_value: 0.0, d_magnitude: (2.0 * err / n) as f32 });
        state = out.next_state;
    }
    let grads = backward(params, &tape, &heads)?;
    Ok((loss, grads))
}

/// Log line of the supervised trainer; `mean_r_alpha` holds the loss.
pub fn train_supervised_baseline(
    data: &[TrainingVideo],
    config: &TrainConfig,
    init: Option<NetParams<f32>>,
    sinks: &mut TrainSinks,
) -> Result<TrainOutcome> {
    config.validate()?;
    let videos = prepare(data, config.frame_stride, config.max_episode_steps)?;
    let params = init.unwrap_or_else(|| NetParams::init(config.nu_max, &mut stream_rng(config.seed, 0)));
    let store = GlobalStore::new(params, config.rmsprop).with_annealing(if config.anneal_lr { config.episodes } else { 0 });
    let episode_fn = |e: u64, snapshot: &NetParams<f32>| -> Result<(Gradients<f32>, EpisodeLog)> {
        let nv = videos.len() as u64;
        let v = &videos[(e % nv) as usize];
        let trace = &v.traces[((e / nv) % v.traces.len() as u64) as usize];
        let (loss, grads) = supervised_loss(snapshot, &v.frames, trace)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("supervised loss in episode {e}")));
        }
        let grads = finish_grads(grads, config.grad_clip, "supervised")?;
        let entry = EpisodeLog {
            worker: 0,
            episode: e,
            video_id: v.video_id.clone(),
            mean_r_alpha: loss,
            mean_r_nu: 0.0,
            value_loss: 0.0,
            steps: trace.len() - 1,
            wallclock: 0.0,
        };
        Ok((grads, entry))
    };
    let log = run_workers(&store, config.workers, config.episodes, config.checkpoint_every, sinks, &episode_fn)?;
    Ok(TrainOutcome { params: store.into_params(), log })
}

/// Result of comparing backpropagated gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub steps: usize,
    pub checked: usize,
    /// Entries skipped because a ReLU changed sign inside the difference.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Worst relative error per tensor name.
    pub per_tensor: Vec<(String, f64)>,
}

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-4;
/// Denominator floor in the relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

struct GradcheckProblem {
    obs: Vec<Vec<f32>>,
    targets: Vec<A2cTarget>,
    positions: Vec<GeoPos>,
    gt: Vec<GroundTruthSet>,
    rewards: RewardParams,
    beta: f64,
}

impl GradcheckProblem {
    fn loss(&self, params: &NetParams<f64>) -> (f64, Vec<bool>) {
        let mut state = LstmState::zeros();
        let mut tape = Tape::new();
        let mut total = 0.0;
        for (t, obs) in self.obs.iter().enumerate() {
            let out = forward_taped(params, obs, &state, &mut tape);
            let tg = &self.targets[t];
            let r = evaluate(self.positions[t], net::direction_bearing(tg.action), ArcLen::new(out.magnitude), &self.gt[t], &self.rewards);
            total += a2c_step_loss(&out, tg, r.nu, self.beta);
            state = out.next_state;
        }
        let pattern = tape.steps().iter().flat_map(|s| s.relu_pattern()).collect();
        (total, pattern)
    }
}

/// Finite-difference check of the full actor-critic objective over a
/// random `steps`-long tape in `f64`, sampling `per_tensor` entries of every
/// tensor. Advantages are frozen at the unperturbed values.
pub fn gradcheck(seed: u64, steps: usize, per_tensor: usize) -> Result<GradcheckReport> {
    let mut rng: Rng = stream_rng(seed, 77);
    let nu_max = 8.0;
    let base32 = NetParams::<f32>::init(nu_max, &mut rng);
    let mut params: NetParams<f64> = base32.cast();
    // lift biases and output heads off zero so every path carries gradient
    for t in TENSORS {
        if matches!(t, Tensor::PolicyW | Tensor::MagnitudeW | Tensor::ValueW) || t.name().ends_with("bias") {
            for v in params.tensor_mut(t) {
                *v += rng.random_range(-0.1..0.1);
            }
        }
    }
    let obs: Vec<Vec<f32>> =
        (0..steps).map(|_| (0..crate::pandata::OBS_SIZE * crate::pandata::OBS_SIZE).map(|_| rng.random::<f32>()).collect()).collect();
    let positions: Vec<GeoPos> = (0..steps).map(|_| GeoPos::new(rng.random_range(-60.0..60.0), rng.random_range(-40.0..40.0))).collect();
    let gt: Vec<GroundTruthSet> = positions
        .iter()
        .map(|&p| {
            let q = crate::sphere::geodesic_step(p, crate::sphere::Bearing::new(rng.random_range(0.0..360.0)), ArcLen::new(rng.random_range(0.0..20.0)));
            let step = crate::pandata::ScanpathStep::new(crate::sphere::Bearing::new(rng.random_range(0.0..360.0)), ArcLen::new(rng.random_range(2.0..6.0)));
            GroundTruthSet::single(q, step)
        })
        .collect();
    let rewards = RewardParams { varsigma: 3.0, ..RewardParams::default() };
    let beta = 0.05;

    // frozen targets from the unperturbed forward pass
    let mut state = LstmState::zeros();
    let mut tape = Tape::new();
    let mut outs = Vec::with_capacity(steps);
    for o in &obs {
        let out = forward_taped(&params, o, &state, &mut tape);
        state = out.next_state.clone();
        outs.push(out);
    }
    let rets: Vec<f64> = (0..steps).map(|_| rng.random_range(0.0..3.0)).collect();
    let mut targets = Vec::with_capacity(steps);
    let mut heads = Vec::with_capacity(steps);
    for (t, out) in outs.iter().enumerate() {
        let action = rng.random_range(0..N_DIRECTIONS);
        let r = evaluate(positions[t], net::direction_bearing(action), ArcLen::new(out.magnitude), &gt[t], &rewards);
        let tg = A2cTarget { action, ret: rets[t], advantage: rets[t] - out.value, dnu_dmag: r.dnu_dmag };
        heads.push(a2c_head_grad(&out.policy, out.value, &tg, beta));
        targets.push(tg);
    }
    let analytic = backward(&params, &tape, &heads)?;
    let problem = GradcheckProblem { obs, targets, positions, gt, rewards, beta };

    let mut report = GradcheckReport { steps, checked: 0, skipped: 0, max_rel_error: 0.0, per_tensor: Vec::new() };
    for t in TENSORS {
        let range = t.range();
        let picks: Vec<usize> = if range.len() <= per_tensor {
            range.clone().collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(range.clone())).collect()
        };
        let mut worst = 0.0f64;
        for i in picks {
            let orig = params.values()[i];
            params.values_mut()[i] = orig + GRADCHECK_STEP;
            let (lp, pat_p) = problem.loss(&params);
            params.values_mut()[i] = orig - GRADCHECK_STEP;
            let (lm, pat_m) = problem.loss(&params);
            params.values_mut()[i] = orig;
            if pat_p != pat_m {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * GRADCHECK_STEP);
            let a = analytic.values()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            worst = worst.max(rel);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_tensor.push((t.name().to_string(), worst));
    }
    Ok(report)
}
