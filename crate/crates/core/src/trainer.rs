//! Asynchronous advantage actor-critic training loop with auxiliary tasks.
//!
//! Each worker owns an environment, a replay buffer, and a recurrent state;
//! it repeatedly snapshots the shared parameters, collects a short on-policy
//! unroll, replays stored experience for the auxiliary objectives, and
//! pushes one combined gradient back. Worker 0 additionally evaluates the
//! current greedy policy at fixed step thresholds and writes metrics rows.
//! With a single worker the whole loop is strictly sequential, so a run is
//! exactly reproducible from its seed.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::env::{GridEnv, LevelSpec, Observation};
use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::losses::{self, A3cStep};
use crate::metrics::MetricsWriter;
use crate::net::{self, ArchPreset, NetworkParams, RecurrentState};
use crate::optim::SharedParamStore;
use crate::replay::ReplayBuffer;

pub const METRIC_COLUMNS: [&str; 8] = [
    "step",
    "wall_time_s",
    "eval_mean_return",
    "eval_mean_steps",
    "loss",
    "entropy",
    "skipped_updates",
    "replay_rewarding_fraction",
];

pub struct TrainOptions {
    pub metrics: Option<MetricsWriter>,
    pub frames_dump: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { metrics: None, frames_dump: None }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    pub env_steps: u64,
    pub reached_target: bool,
    pub final_eval_return: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub mean_return: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, Copy)]
struct UpdateStats {
    loss: f64,
    entropy: f64,
}

fn mix_seed(base: u64, salt: u64) -> u64 {
    base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct Worker<'a> {
    cfg: &'a RunConfig,
    arch: ArchPreset,
    store: &'a SharedParamStore,
    env: GridEnv,
    obs: Observation,
    rec: RecurrentState,
    rng: ChaCha8Rng,
    replay: ReplayBuffer,
}

impl<'a> Worker<'a> {
    fn new(id: usize, cfg: &'a RunConfig, store: &'a SharedParamStore) -> Result<Self> {
        let arch = store.preset().clone();
        let mut env = GridEnv::new(cfg.level.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1 + id as u64));
        let obs = env.reset(rng.gen())?;
        let replay = ReplayBuffer::new(cfg.replay_capacity, arch.pc_crop, arch.pc_grid);
        Ok(Worker {
            cfg,
            arch,
            store,
            env,
            obs,
            rec: RecurrentState::zeros(store.preset().lstm_size),
            rng,
            replay,
        })
    }

    /// One training update: snapshot, unroll, auxiliary replay, gradient push.
    fn update(&mut self) -> Result<UpdateStats> {
        let mut params = self.store.snapshot();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let arch = self.arch.clone();
        let n_act = arch.n_act;

        let mut rec_vars = {
            let h = tape.constant(&[arch.lstm_size], self.rec.hidden.clone())?;
            let c = tape.constant(&[arch.lstm_size], self.rec.cell.clone())?;
            (h, c)
        };

        let mut steps: Vec<(Var, Var, usize, f64)> = Vec::with_capacity(self.cfg.loss.unroll_n);
        let mut entropy_sum = 0.0;
        let mut terminal = false;
        for _ in 0..self.cfg.loss.unroll_n {
            let px = tape.constant(self.obs.pixels.shape(), self.obs.pixels.data().to_vec())?;
            let out = net::trunk_forward(
                &mut tape,
                &vars,
                &arch,
                px,
                &self.obs.action_one_hot(n_act),
                self.obs.last_reward,
                Some(rec_vars),
            )?;
            let probs_var = tape.softmax(out.policy_logits)?;
            let probs = tape.value(probs_var).to_vec();
            entropy_sum -= probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
            let action = sample_categorical(&probs, &mut self.rng);
            let outcome = self.env.step(action)?;
            self.replay.append(self.obs.clone(), action, outcome.reward, outcome.done);
            steps.push((out.policy_logits, out.value, action, outcome.reward));
            self.rec = RecurrentState {
                hidden: tape.value(out.hidden).to_vec(),
                cell: tape.value(out.cell).to_vec(),
            };
            rec_vars = (out.hidden, out.cell);
            self.obs = outcome.observation;
            if outcome.done {
                terminal = true;
                self.obs = self.env.reset(self.rng.gen())?;
                self.rec = RecurrentState::zeros(arch.lstm_size);
                break;
            }
        }

        let bootstrap = if terminal {
            0.0
        } else {
            let px = tape.constant(self.obs.pixels.shape(), self.obs.pixels.data().to_vec())?;
            let out = net::trunk_forward(
                &mut tape,
                &vars,
                &arch,
                px,
                &self.obs.action_one_hot(n_act),
                self.obs.last_reward,
                Some(rec_vars),
            )?;
            tape.scalar_value(out.value)
        };

        let rewards: Vec<f64> = steps.iter().map(|s| s.3).collect();
        let returns = losses::n_step_returns(&rewards, bootstrap, self.cfg.loss.gamma);
        let a3c_steps: Vec<A3cStep> = steps
            .iter()
            .zip(&returns)
            .map(|(&(policy_logits, value, action, _), &ret)| A3cStep { policy_logits, value, action, ret })
            .collect();
        let a3c = losses::a3c_loss(&mut tape, &a3c_steps, self.cfg.loss.entropy_alpha)?;

        let (vr, pc, fc) = self.replayed_losses(&mut tape, &vars)?;
        let rp = self.reward_prediction(&mut tape, &vars)?;
        let total = losses::unreal_loss(&mut tape, a3c, vr, pc, fc, rp, &self.cfg.loss)?;

        let grads = tape.backward(total)?;
        params.zero_grads();
        params.accumulate_grads(&vars, &grads);
        self.store.apply_gradients(&params)?;
        let transitions = steps.len() as u64;
        self.store.add_env_steps(transitions);

        Ok(UpdateStats {
            loss: tape.scalar_value(total),
            entropy: entropy_sum / steps.len() as f64,
        })
    }

    /// Value-replay, pixel-control, and feature-control losses over one
    /// shared replayed window (one trunk pass feeds all three heads).
    fn replayed_losses(&mut self, tape: &mut Tape, vars: &net::ParamVars) -> Result<(Option<Var>, Option<Var>, Option<Var>)> {
        let f = &self.cfg.features;
        let want_window = f.value_replay || f.pixel_control || f.feature_control;
        if !want_window {
            return Ok((None, None, None));
        }
        let len = self.cfg.loss.unroll_n;
        let start = match self.replay.sample_sequence(len, &mut self.rng) {
            Ok(s) => s,
            Err(Error::InsufficientData { .. }) => return Ok((None, None, None)),
            Err(e) => return Err(e),
        };
        let arch = &self.arch;

        // replayed sequences restart the recurrence from the zero state
        let mut rec = None;
        let mut values = Vec::with_capacity(len);
        let mut lstm_outputs = Vec::with_capacity(len);
        let mut conv_features: Vec<Vec<f64>> = Vec::with_capacity(len);
        for i in 0..len {
            let step = self.replay.get(start + i);
            let px = tape.constant(step.observation.pixels.shape(), step.observation.pixels.data().to_vec())?;
            let out = net::trunk_forward(
                tape,
                vars,
                arch,
                px,
                &step.observation.action_one_hot(arch.n_act),
                step.observation.last_reward,
                rec,
            )?;
            rec = Some((out.hidden, out.cell));
            values.push(out.value);
            lstm_outputs.push(out.lstm_output);
            if f.feature_control {
                conv_features.push(tape.value(out.conv2_features).to_vec());
            }
        }

        // last transition in the window may terminate its episode; then the
        // trailing frame belongs to the next episode and must not bootstrap
        let ended = self.replay.get(start + len - 2).episode_boundary;
        let rewards: Vec<f64> = (0..len - 1).map(|t| self.replay.get(start + t).reward).collect();
        let actions: Vec<usize> = (0..len - 1).map(|t| self.replay.get(start + t).action).collect();

        let vr = if f.value_replay {
            let boot = if ended { 0.0 } else { tape.scalar_value(values[len - 1]) };
            Some(losses::value_replay_loss(tape, &values[..len - 1], &rewards, boot, self.cfg.loss.gamma)?)
        } else {
            None
        };

        let pc = if f.pixel_control {
            let g = arch.pc_grid;
            let m = g * g;
            let mut q_steps = Vec::with_capacity(len - 1);
            for t in 0..len - 1 {
                q_steps.push(net::pixel_control_head(tape, vars, arch, lstm_outputs[t])?);
            }
            // pseudo-reward of transition t is stored on the frame it produced
            let pseudo: Vec<Vec<f64>> = (0..len - 1)
                .map(|t| self.replay.get(start + t + 1).pixel_pseudo_rewards.data().to_vec())
                .collect();
            let boot = if ended {
                vec![0.0; m]
            } else {
                let q_last = net::pixel_control_head(tape, vars, arch, lstm_outputs[len - 1])?;
                max_per_cell(tape.value(q_last), arch.n_act, m)
            };
            Some(losses::n_step_q_loss(tape, &q_steps, &actions, &pseudo, &boot, self.cfg.loss.gamma_pc)?)
        } else {
            None
        };

        let fc_loss = if f.feature_control {
            let c2 = arch.conv2.0;
            let mut q_steps = Vec::with_capacity(len - 1);
            for t in 0..len - 1 {
                q_steps.push(net::feature_control_head(tape, vars, arch, lstm_outputs[t])?);
            }
            let means: Vec<Vec<f64>> = conv_features.iter().map(|v| net::channel_means(v, c2)).collect();
            // pseudo-reward: positive change in each channel's mean activation
            let pseudo: Vec<Vec<f64>> = (0..len - 1)
                .map(|t| {
                    means[t + 1]
                        .iter()
                        .zip(&means[t])
                        .map(|(&next, &cur)| (next - cur).max(0.0))
                        .collect()
                })
                .collect();
            let boot = if ended {
                vec![0.0; c2]
            } else {
                let q_last = net::feature_control_head(tape, vars, arch, lstm_outputs[len - 1])?;
                max_per_cell(tape.value(q_last), arch.n_act, c2)
            };
            Some(losses::n_step_q_loss(tape, &q_steps, &actions, &pseudo, &boot, self.cfg.loss.gamma_pc)?)
        } else {
            None
        };

        Ok((vr, pc, fc_loss))
    }

    fn reward_prediction(&mut self, tape: &mut Tape, vars: &net::ParamVars) -> Result<Option<Var>> {
        if !self.cfg.features.reward_prediction {
            return Ok(None);
        }
        let sample = match self.replay.sample_rp(&mut self.rng) {
            Ok(s) => s,
            Err(Error::InsufficientData { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut frames = Vec::with_capacity(3);
        for &pos in &sample.frames {
            let obs = &self.replay.get(pos).observation;
            frames.push(tape.constant(obs.pixels.shape(), obs.pixels.data().to_vec())?);
        }
        let logits = net::reward_prediction_head(tape, vars, &self.arch, &frames)?;
        Ok(Some(losses::reward_prediction_loss(tape, logits, sample.target_class)?))
    }
}

/// Per-cell max over the action axis of a flat [n_act, m] Q slab.
fn max_per_cell(q: &[f64], n_act: usize, m: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; m];
    for a in 0..n_act {
        for i in 0..m {
            out[i] = out[i].max(q[a * m + i]);
        }
    }
    out
}

/// Runs `episodes` greedy episodes against a parameter snapshot; optionally
/// dumps every frame of the first episode as PPM images.
pub fn evaluate(
    params: &NetworkParams,
    level: &LevelSpec,
    episodes: usize,
    eval_seed: u64,
    frames_dump: Option<&Path>,
) -> Result<EvalReport> {
    let arch = params.preset.clone();
    let mut env = GridEnv::new(level.clone())?;
    let mut total_return = 0.0;
    let mut total_steps = 0usize;
    for ep in 0..episodes {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let mut obs = env.reset(mix_seed(eval_seed, 0xEAA1 + ep as u64))?;
        let mut rec = None;
        let mut frame = 0usize;
        loop {
            if ep == 0 {
                if let Some(dir) = frames_dump {
                    crate::env::write_ppm(&obs.pixels, &dir.join(format!("frame_{frame:05}.ppm")))?;
                }
            }
            let px = tape.constant(obs.pixels.shape(), obs.pixels.data().to_vec())?;
            let out = net::trunk_forward(&mut tape, &vars, &arch, px, &obs.action_one_hot(arch.n_act), obs.last_reward, rec)?;
            let action = argmax(tape.value(out.policy_logits));
            rec = Some((out.hidden, out.cell));
            let outcome = env.step(action)?;
            obs = outcome.observation;
            total_steps += 1;
            frame += 1;
            if outcome.done {
                total_return += env.state().map(|s| s.episode_return).unwrap_or(0.0);
                break;
            }
        }
    }
    Ok(EvalReport {
        mean_return: total_return / episodes as f64,
        mean_steps: total_steps as f64 / episodes as f64,
    })
}

/// Trains until `total_env_steps` or until the evaluation return reaches
/// `target_return`. Blocking; spawns `cfg.workers` threads.
pub fn train(cfg: &RunConfig, store: &Arc<SharedParamStore>, opts: TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let stop = AtomicBool::new(false);
    let t0 = Instant::now();
    let TrainOptions { mut metrics, frames_dump } = opts;

    let result: Result<(bool, Option<f64>)> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for id in 1..cfg.workers {
            let stop = &stop;
            let store_ref: &SharedParamStore = store;
            handles.push(scope.spawn(move || -> Result<()> {
                let mut w = Worker::new(id, cfg, store_ref)?;
                while !stop.load(Ordering::Relaxed) && store_ref.env_steps() < cfg.total_env_steps {
                    w.update()?;
                }
                Ok(())
            }));
        }

        // worker 0 runs on this thread and owns evaluation and metrics
        let mut drive = || -> Result<(bool, Option<f64>)> {
            let mut w = Worker::new(0, cfg, store)?;
            let mut next_eval = cfg.eval_interval;
            let mut reached = false;
            let mut last_eval = None;
            let mut dumped = false;
            let mut stats = UpdateStats { loss: 0.0, entropy: 0.0 };
            while !stop.load(Ordering::Relaxed) && store.env_steps() < cfg.total_env_steps {
                stats = w.update()?;
                let total = store.env_steps();
                while total >= next_eval {
                    let snap = store.snapshot();
                    let dump = if dumped { None } else { frames_dump.as_deref() };
                    dumped = true;
                    let ev = evaluate(&snap, &cfg.level, cfg.eval_episodes, mix_seed(cfg.seed, 0x5EED), dump)?;
                    last_eval = Some(ev.mean_return);
                    let wall = if cfg.fake_clock {
                        next_eval as f64 * 1e-3
                    } else {
                        t0.elapsed().as_secs_f64()
                    };
                    if let Some(m) = metrics.as_mut() {
                        m.write_row(&[
                            next_eval as f64,
                            wall,
                            ev.mean_return,
                            ev.mean_steps,
                            stats.loss,
                            stats.entropy,
                            store.skipped_updates() as f64,
                            w.replay.rewarding_fraction(),
                        ])?;
                    }
                    if let Some(target) = cfg.target_return {
                        if ev.mean_return >= target {
                            reached = true;
                            stop.store(true, Ordering::Relaxed);
                        }
                    }
                    next_eval += cfg.eval_interval;
                }
            }
            let _ = stats;
            stop.store(true, Ordering::Relaxed);
            Ok((reached, last_eval))
        };
        let out = drive();
        stop.store(true, Ordering::Relaxed);
        let mut first_err = None;
        for (i, h) in handles.into_iter().enumerate() {
            match h.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    first_err.get_or_insert(Error::Worker { worker: i + 1, source: Box::new(e) });
                }
                Err(_) => {
                    first_err.get_or_insert(Error::Other(format!("worker {} panicked", i + 1)));
                }
            }
        }
        match (out, first_err) {
            (Err(e), _) => Err(e),
            (Ok(_), Some(e)) => Err(e),
            (Ok(v), None) => Ok(v),
        }
    });

    let (reached_target, final_eval_return) = result?;
    Ok(TrainReport {
        env_steps: store.env_steps(),
        reached_target,
        final_eval_return,
    })
}
