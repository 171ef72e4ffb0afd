//! One workflow: look through the viewport at the current predicted
//! position, pick a heading and a step length, score them against the
//! ground truth of that frame, and move.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::net::{direction_bearing, forward, forward_taped, NetOutput, NetParams, Tape, N_DIRECTIONS};
use crate::pandata::{extract_fov, Frame};
use crate::reward::{evaluate, GroundTruthSet, RewardParams};
use crate::rng::Rng;
use crate::sphere::{geodesic_step, ArcLen, Bearing, GeoPos};

/// One step of experience. The observation and the incoming recurrent state
/// live in the matching record of [`EpisodeTape::net_tape`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceStep {
    pub frame: usize,
    pub position: GeoPos,
    /// Index into the eight headings.
    pub action: usize,
    pub action_dir: Bearing,
    pub action_mag: ArcLen,
    pub r_alpha: f64,
    pub r_nu: f64,
    /// Derivative of `r_nu` with respect to the step length.
    pub dnu_dmag: f64,
    pub policy: [f32; N_DIRECTIONS],
    pub value: f32,
}

#[derive(Debug, Clone)]
pub struct EpisodeTape {
    pub steps: Vec<ExperienceStep>,
    /// Forward activations, present when the episode was run for training.
    pub net_tape: Option<Tape<f32>>,
    /// True when the episode ran through every supplied frame.
    pub terminal: bool,
}

impl EpisodeTape {
    pub fn mean_r_alpha(&self) -> f64 {
        mean(self.steps.iter().map(|s| s.r_alpha))
    }

    pub fn mean_r_nu(&self) -> f64 {
        mean(self.steps.iter().map(|s| s.r_nu))
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        0.0
    } else {
        it.sum::<f64>() / n as f64
    }
}

/// Picks a heading index and a step length from the network output.
pub trait ActionChooser {
    fn choose(&mut self, frame: usize, out: &NetOutput<f32>, rng: &mut Rng) -> (usize, f64);
}

/// Heading sampled from the ε-mixture of the policy; length from the
/// magnitude head.
#[derive(Debug, Clone, Copy)]
pub struct Sampled {
    pub eps: f64,
}

impl ActionChooser for Sampled {
    fn choose(&mut self, _: usize, out: &NetOutput<f32>, rng: &mut Rng) -> (usize, f64) {
        (sample_direction(&out.policy, self.eps, rng), out.magnitude as f64)
    }
}

/// Most probable heading; length from the magnitude head.
#[derive(Debug, Clone, Copy)]
pub struct Greedy;

impl ActionChooser for Greedy {
    fn choose(&mut self, _: usize, out: &NetOutput<f32>, _: &mut Rng) -> (usize, f64) {
        (out.greedy_direction(), out.magnitude as f64)
    }
}

impl<F: FnMut(usize, &NetOutput<f32>, &mut Rng) -> (usize, f64)> ActionChooser for F {
    fn choose(&mut self, frame: usize, out: &NetOutput<f32>, rng: &mut Rng) -> (usize, f64) {
        self(frame, out, rng)
    }
}

/// With probability `eps` a uniform heading, otherwise a draw from `policy`.
/// Always consumes exactly two uniforms from `rng`.
pub fn sample_direction(policy: &[f32; N_DIRECTIONS], eps: f64, rng: &mut Rng) -> usize {
    let explore: f64 = rng.random();
    let u: f64 = rng.random();
    if explore < eps {
        return ((u * N_DIRECTIONS as f64) as usize).min(N_DIRECTIONS - 1);
    }
    let total: f64 = policy.iter().map(|&p| p as f64).sum();
    let mut acc = 0.0;
    let target = u * total;
    for (k, &p) in policy.iter().enumerate() {
        acc += p as f64;
        if target < acc {
            return k;
        }
    }
    // rounding can leave `target` at the very top; take the last non-zero entry
    policy.iter().rposition(|&p| p > 0.0).unwrap_or(N_DIRECTIONS - 1)
}

/// Runs one workflow from `start` with a zero recurrent state. Step `t` sees
/// `frames[t]` and is scored against `gt[t]`, so the episode has `gt.len()`
/// steps. Returns the tape and the visited positions (one more than the
/// number of steps).
pub fn run_episode(
    frames: &[Frame],
    gt: &[GroundTruthSet],
    params: &NetParams<f32>,
    rewards: &RewardParams,
    start: GeoPos,
    chooser: &mut dyn ActionChooser,
    record: bool,
    rng: &mut Rng,
) -> Result<(EpisodeTape, Vec<GeoPos>)> {
    if frames.len() < gt.len() {
        return Err(Error::InvalidInput(format!("{} frames for {} ground-truth steps", frames.len(), gt.len())));
    }
    let mut tape = record.then(Tape::new);
    let mut state = crate::net::LstmState::zeros();
    let mut pos = start;
    let mut positions = Vec::with_capacity(gt.len() + 1);
    positions.push(pos);
    let mut steps = Vec::with_capacity(gt.len());
    for (t, gt_t) in gt.iter().enumerate() {
        let obs = extract_fov(&frames[t], pos);
        let out = match tape.as_mut() {
            Some(tp) => forward_taped(params, obs.values(), &state, tp),
            None => forward(params, obs.values(), &state),
        };
        let (action, mag) = chooser.choose(t, &out, rng);
        let dir = direction_bearing(action);
        let mag = ArcLen::new(mag.max(0.0));
        let r = evaluate(pos, dir, mag, gt_t, rewards);
        steps.push(ExperienceStep {
            frame: t,
            position: pos,
            action,
            action_dir: dir,
            action_mag: mag,
            r_alpha: r.alpha,
            r_nu: r.nu,
            dnu_dmag: r.dnu_dmag,
            policy: out.policy,
            value: out.value,
        });
        pos = geodesic_step(pos, dir, mag);
        positions.push(pos);
        state = out.next_state;
    }
    Ok((EpisodeTape { steps, net_tape: tape, terminal: true }, positions))
}

/// Runs one workflow for `steps` steps without scoring it; returns the
/// `steps + 1` visited positions.
pub fn rollout(
    frames: &[Frame],
    params: &NetParams<f32>,
    start: GeoPos,
    steps: usize,
    chooser: &mut dyn ActionChooser,
    rng: &mut Rng,
) -> Result<Vec<GeoPos>> {
    if frames.len() < steps {
        return Err(Error::InvalidInput(format!("{} frames for {steps} steps", frames.len())));
    }
    let mut state = crate::net::LstmState::zeros();
    let mut pos = start;
    let mut positions = Vec::with_capacity(steps + 1);
    positions.push(pos);
    for (t, frame) in frames.iter().take(steps).enumerate() {
        let out = forward(params, extract_fov(frame, pos).values(), &state);
        let (action, mag) = chooser.choose(t, &out, rng);
        pos = geodesic_step(pos, direction_bearing(action), ArcLen::new(mag.max(0.0)));
        positions.push(pos);
        state = out.next_state;
    }
    Ok(positions)
}

/// Ground-truth sets for every step of a video: step `t` pairs each
/// subject's position at `t` with its move from `t` to `t + 1`.
pub fn ground_truth_sets(traces: &[&crate::pandata::HMTrace]) -> Result<Vec<GroundTruthSet>> {
    let first = traces.first().ok_or_else(|| Error::InvalidInput("no traces".into()))?;
    let len = first.len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::InvalidInput("traces of one video differ in length".into()));
    }
    let paths: Vec<Vec<crate::pandata::ScanpathStep>> =
        traces.iter().map(|t| crate::pandata::derive_scanpath(t)).collect::<Result<_>>()?;
    (0..len - 1)
        .map(|t| GroundTruthSet::new(traces.iter().zip(&paths).map(|(tr, sp)| (tr.positions[t], sp[t])).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pandata::{gen_synthetic, HMTrace, Motion, ScanpathStep, SynthSpec};
    use crate::reward::{reward_alpha, reward_nu};
    use crate::rng::stream_rng;

    fn world(frames: usize) -> (Vec<Frame>, Vec<HMTrace>) {
        let spec = SynthSpec::single_blob("v", 64, frames, Motion::Linear { bearing_deg: 90.0, speed_deg: 2.0 });
        gen_synthetic(&spec, 3).unwrap()
    }

    fn chi2_uniform(counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        let e = n as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = stream_rng(1, 0);
        let policy = [0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut counts = [0usize; 8];
        for _ in 0..100_000 {
            counts[sample_direction(&policy, 1.0, &mut rng)] += 1;
        }
        // 7 degrees of freedom, 0.999 quantile
        assert!(chi2_uniform(&counts) < 24.32, "{counts:?}");
    }

    #[test]
    fn one_hot_policy_without_exploration() {
        let mut rng = stream_rng(2, 0);
        let mut policy = [0.0f32; 8];
        policy[5] = 1.0;
        assert!((0..1000).all(|_| sample_direction(&policy, 0.0, &mut rng) == 5));
    }

    #[test]
    fn mixture_matches_expected_frequencies() {
        let mut rng = stream_rng(3, 0);
        let policy = [0.3f32, 0.05, 0.2, 0.05, 0.1, 0.1, 0.15, 0.05];
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[sample_direction(&policy, 0.1, &mut rng)] += 1;
        }
        for k in 0..8 {
            let p = 0.9 * policy[k] as f64 + 0.1 / 8.0;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            let got = counts[k] as f64 / n as f64;
            assert!((got - p).abs() < 3.0 * sd + 1e-12, "k={k} got {got} want {p}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (frames, traces) = world(12);
        let refs: Vec<&HMTrace> = traces.iter().collect();
        let gt = ground_truth_sets(&refs).unwrap();
        let params = NetParams::init(10.0, &mut stream_rng(5, 0));
        let run = || {
            let mut rng = stream_rng(9, 1);
            run_episode(&frames, &gt, &params, &RewardParams::default(), GeoPos::origin(), &mut Sampled { eps: 0.0 }, false, &mut rng)
                .unwrap()
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a.steps, b.steps);
        assert_eq!(pa, pb);
        assert_eq!(a.steps.len(), 11);
        assert_eq!(pa.len(), 12);
    }

    #[test]
    fn zero_network_walks_with_half_the_cap() {
        let (frames, traces) = world(10);
        let refs: Vec<&HMTrace> = traces.iter().collect();
        let gt = ground_truth_sets(&refs).unwrap();
        let params = NetParams::zeros(6.0);
        let mut rng = stream_rng(4, 0);
        let (tape, _) =
            run_episode(&frames, &gt, &params, &RewardParams::default(), GeoPos::origin(), &mut Sampled { eps: 0.1 }, true, &mut rng)
                .unwrap();
        for s in &tape.steps {
            assert_eq!(s.action_mag.deg(), 3.0);
            assert!(s.policy.iter().all(|&p| (p - 0.125).abs() < 1e-7));
        }
        assert_eq!(tape.net_tape.unwrap().len(), 9);
    }

    #[test]
    fn perfect_imitation_of_a_still_viewer() {
        let frames = vec![Frame::filled(64, 32, 40).unwrap(); 6];
        let trace = HMTrace::new("v", "s", vec![GeoPos::origin(); 6]).unwrap();
        let gt = ground_truth_sets(&[&trace]).unwrap();
        let still = ScanpathStep::stationary();
        let mut force = |_: usize, _: &NetOutput<f32>, _: &mut Rng| (crate::net::quantize_bearing(still.dir), 0.0);
        let params = NetParams::init(10.0, &mut stream_rng(1, 0));
        let (tape, positions) =
            run_episode(&frames, &gt, &params, &RewardParams::default(), GeoPos::origin(), &mut force, false, &mut stream_rng(0, 0))
                .unwrap();
        assert!(tape.steps.iter().all(|s| s.r_alpha == 1.0 && s.r_nu == 1.0));
        assert!(positions.iter().all(|p| *p == GeoPos::origin()));
    }

    #[test]
    fn recorded_rewards_recompute() {
        let (frames, traces) = world(15);
        let refs: Vec<&HMTrace> = traces.iter().collect();
        let gt = ground_truth_sets(&refs).unwrap();
        let params = NetParams::init(10.0, &mut stream_rng(8, 0));
        let rp = RewardParams::default();
        let (tape, positions) =
            run_episode(&frames, &gt, &params, &rp, GeoPos::origin(), &mut Sampled { eps: 0.3 }, false, &mut stream_rng(8, 2))
                .unwrap();
        for (t, s) in tape.steps.iter().enumerate() {
            assert_eq!(s.position, positions[t]);
            let step = ScanpathStep::new(s.action_dir, s.action_mag);
            assert!((reward_alpha(s.position, s.action_dir, &gt[t], &rp) - s.r_alpha).abs() < 1e-12);
            assert!((reward_nu(s.position, step, &gt[t], &rp) - s.r_nu).abs() < 1e-12);
            assert!(s.r_alpha > 0.0 && s.r_alpha <= 1.0 && s.r_nu > 0.0 && s.r_nu <= 1.0);
            assert_eq!(s.action_dir.deg() % 45.0, 0.0);
            assert!(positions[t + 1].lat().abs() <= 90.0);
        }
    }

    #[test]
    fn too_few_frames() {
        let (frames, traces) = world(8);
        let refs: Vec<&HMTrace> = traces.iter().collect();
        let gt = ground_truth_sets(&refs).unwrap();
        let params = NetParams::zeros(10.0);
        let r = run_episode(&frames[..3], &gt, &params, &RewardParams::default(), GeoPos::origin(), &mut Greedy, false, &mut stream_rng(0, 0));
        assert!(r.is_err());
    }
}
