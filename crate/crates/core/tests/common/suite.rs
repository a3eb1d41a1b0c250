//! The randomized gradient suite: every differentiable op and every
//! composite loss checked against central finite differences.
//!
//! Loss targets that the training code treats as constants (advantages,
//! n-step Q targets) take the same role here: either they genuinely do not
//! depend on the differentiated leaves, or the check is restricted to the
//! leaves they do not depend on.

use auxrl::graph::{Tape, Var};
use auxrl::losses::{self, A3cStep, LossWeights};
use auxrl::net::{self, ArchPreset, NetworkParams};
use auxrl::replay::RewardClass;
use auxrl::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{assert_gradcheck, rand_vec, rand_vec_off_zero, seeded};

fn weighted_sum(tape: &mut Tape, x: Var, w: &[f64]) -> Var {
    let shape = tape.shape(x).to_vec();
    let wc = tape.constant(&shape, w.to_vec()).unwrap();
    let prod = tape.mul(x, wc).unwrap();
    tape.sum(prod).unwrap()
}

/// One randomized instance per elementary op; returns (checks run, worst err).
pub fn elementary_ops_once(rng: &mut ChaCha8Rng) -> (usize, f64) {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    let mut record = |e: f64| {
        count += 1;
        worst = worst.max(e);
    };
    let n = rng.gen_range(3..8);
    let w = rand_vec(rng, n, -1.0, 1.0);

    let x = Tensor::from_vec(&[n], rand_vec_off_zero(rng, n)).unwrap();
    record(assert_gradcheck("relu", &[x.clone()], |t, v| {
        let y = t.relu(v[0]).unwrap();
        weighted_sum(t, y, &w)
    }));
    record(assert_gradcheck("sigmoid", &[x.clone()], |t, v| {
        let y = t.sigmoid(v[0]).unwrap();
        weighted_sum(t, y, &w)
    }));
    record(assert_gradcheck("tanh", &[x.clone()], |t, v| {
        let y = t.tanh(v[0]).unwrap();
        weighted_sum(t, y, &w)
    }));
    record(assert_gradcheck("softmax", &[x.clone()], |t, v| {
        let y = t.softmax(v[0]).unwrap();
        weighted_sum(t, y, &w)
    }));
    record(assert_gradcheck("log_softmax", &[x.clone()], |t, v| {
        let y = t.log_softmax(v[0]).unwrap();
        weighted_sum(t, y, &w)
    }));

    let a = Tensor::from_vec(&[n], rand_vec(rng, n, -2.0, 2.0)).unwrap();
    let b = Tensor::from_vec(&[n], rand_vec(rng, n, -2.0, 2.0)).unwrap();
    record(assert_gradcheck("add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        weighted_sum(t, y, &w)
    }));
    record(assert_gradcheck("sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        weighted_sum(t, y, &w)
    }));
    record(assert_gradcheck("mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        weighted_sum(t, y, &w)
    }));
    let c = rng.gen_range(-3.0..3.0);
    record(assert_gradcheck("scale", &[a.clone()], |t, v| {
        let y = t.scale(v[0], c).unwrap();
        weighted_sum(t, y, &w)
    }));
    record(assert_gradcheck("sum", &[a.clone()], |t, v| t.sum(v[0]).unwrap()));
    record(assert_gradcheck("mean", &[a.clone()], |t, v| t.mean(v[0]).unwrap()));
    let idx = rng.gen_range(0..n);
    record(assert_gradcheck("index", &[a.clone()], |t, v| t.index(v[0], idx).unwrap()));
    let start = rng.gen_range(0..n - 1);
    let slice_len = rng.gen_range(1..=n - start);
    let ws = rand_vec(rng, slice_len, -1.0, 1.0);
    record(assert_gradcheck("slice", &[a.clone()], |t, v| {
        let y = t.slice(v[0], start, &[slice_len]).unwrap();
        weighted_sum(t, y, &ws)
    }));
    let wcat = rand_vec(rng, 2 * n, -1.0, 1.0);
    record(assert_gradcheck("concat", &[a.clone(), b.clone()], |t, v| {
        let y = t.concat(&[v[0], v[1]]).unwrap();
        weighted_sum(t, y, &wcat)
    }));

    // channel-structured ops
    let (ch, hh, ww) = (rng.gen_range(2..4usize), rng.gen_range(2..4usize), rng.gen_range(2..4usize));
    let img = Tensor::from_vec(&[ch, hh, ww], rand_vec(rng, ch * hh * ww, -1.0, 1.0)).unwrap();
    let bias = Tensor::from_vec(&[ch], rand_vec(rng, ch, -1.0, 1.0)).unwrap();
    let wimg = rand_vec(rng, ch * hh * ww, -1.0, 1.0);
    record(assert_gradcheck("add_bias", &[img.clone(), bias], |t, v| {
        let y = t.add_bias(v[0], v[1]).unwrap();
        weighted_sum(t, y, &wimg)
    }));
    record(assert_gradcheck("reshape", &[img.clone()], |t, v| {
        let y = t.reshape(v[0], &[ch * hh * ww]).unwrap();
        weighted_sum(t, y, &wimg)
    }));
    let wplane = rand_vec(rng, hh * ww, -1.0, 1.0);
    record(assert_gradcheck("mean_first_dim", &[img.clone()], |t, v| {
        let y = t.mean_first_dim(v[0]).unwrap();
        weighted_sum(t, y, &wplane)
    }));
    let reps = rng.gen_range(2..4usize);
    let wb = rand_vec(rng, reps * ch * hh * ww, -1.0, 1.0);
    record(assert_gradcheck("broadcast_first_dim", &[img.clone()], |t, v| {
        let y = t.broadcast_first_dim(v[0], reps).unwrap();
        weighted_sum(t, y, &wb)
    }));

    let (rows, cols) = (rng.gen_range(2..5usize), rng.gen_range(2..5usize));
    let m = Tensor::from_vec(&[rows, cols], rand_vec(rng, rows * cols, -1.0, 1.0)).unwrap();
    let xv = Tensor::from_vec(&[cols], rand_vec(rng, cols, -1.0, 1.0)).unwrap();
    let wrow = rand_vec(rng, rows, -1.0, 1.0);
    record(assert_gradcheck("matvec", &[m, xv], |t, v| {
        let y = t.matvec(v[0], v[1]).unwrap();
        weighted_sum(t, y, &wrow)
    }));

    // convolution and its adjoint
    let (ic, f, k, s) = (
        rng.gen_range(1..3usize),
        rng.gen_range(1..3usize),
        rng.gen_range(2..4usize),
        rng.gen_range(1..3usize),
    );
    let hin = k + s * rng.gen_range(1..3usize);
    let cx = Tensor::from_vec(&[ic, hin, hin], rand_vec(rng, ic * hin * hin, -1.0, 1.0)).unwrap();
    let ck = Tensor::from_vec(&[f, ic, k, k], rand_vec(rng, f * ic * k * k, -1.0, 1.0)).unwrap();
    let oh = (hin - k) / s + 1;
    let wconv = rand_vec(rng, f * oh * oh, -1.0, 1.0);
    record(assert_gradcheck("conv2d", &[cx, ck.clone()], |t, v| {
        let y = t.conv2d(v[0], v[1], s).unwrap();
        weighted_sum(t, y, &wconv)
    }));
    let hdec = rng.gen_range(1..4usize);
    let dx = Tensor::from_vec(&[f, hdec, hdec], rand_vec(rng, f * hdec * hdec, -1.0, 1.0)).unwrap();
    let dout = (hdec - 1) * s.min(k) + k;
    let wdec = rand_vec(rng, ic * dout * dout, -1.0, 1.0);
    let sd = s.min(k);
    record(assert_gradcheck("deconv2d", &[dx, ck], |t, v| {
        let y = t.deconv2d(v[0], v[1], sd).unwrap();
        weighted_sum(t, y, &wdec)
    }));

    (count, worst)
}

/// One randomized instance per composite loss; returns (checks, worst err).
pub fn composite_losses_once(rng: &mut ChaCha8Rng) -> (usize, f64) {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    let mut record = |e: f64| {
        count += 1;
        worst = worst.max(e);
    };

    let n_act = rng.gen_range(3..6usize);
    let steps = rng.gen_range(2..5usize);

    // A3C policy + entropy gradient w.r.t. logits. Values enter as constants
    // because the advantage coefficient is gradient-stopped by definition;
    // the value-regression gradient is covered by the replay loss below.
    {
        let logits: Vec<Tensor> = (0..steps)
            .map(|_| Tensor::from_vec(&[n_act], rand_vec(rng, n_act, -1.0, 1.0)).unwrap())
            .collect();
        let values: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rets: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let actions: Vec<usize> = (0..steps).map(|_| rng.gen_range(0..n_act)).collect();
        let alpha = rng.gen_range(0.001..0.1);
        record(assert_gradcheck("a3c_loss(logits)", &logits, |t, v| {
            let s: Vec<A3cStep> = v
                .iter()
                .enumerate()
                .map(|(i, &lv)| A3cStep {
                    policy_logits: lv,
                    value: t.constant_scalar(values[i]),
                    action: actions[i],
                    ret: rets[i],
                })
                .collect();
            losses::a3c_loss(t, &s, alpha).unwrap()
        }));
    }

    // value replay w.r.t. the value estimates
    {
        let values: Vec<Tensor> = (0..steps).map(|_| Tensor::scalar(rng.gen_range(-1.0..1.0))).collect();
        let rewards: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bootstrap = rng.gen_range(-1.0..1.0);
        let gamma = rng.gen_range(0.8..0.999);
        record(assert_gradcheck("value_replay_loss", &values, |t, v| {
            losses::value_replay_loss(t, v, &rewards, bootstrap, gamma).unwrap()
        }));
    }

    // n-step Q loss w.r.t. the Q predictions (targets are inputs, not leaves)
    let m = rng.gen_range(2..5usize);
    let q_data: Vec<Tensor> = (0..steps)
        .map(|_| Tensor::from_vec(&[n_act, m], rand_vec(rng, n_act * m, -1.0, 1.0)).unwrap())
        .collect();
    let actions: Vec<usize> = (0..steps).map(|_| rng.gen_range(0..n_act)).collect();
    let pseudo: Vec<Vec<f64>> = (0..steps).map(|_| rand_vec(rng, m, 0.0, 0.5)).collect();
    let boot = rand_vec(rng, m, -0.5, 0.5);
    let gamma_pc = rng.gen_range(0.8..0.95);
    {
        let (actions, pseudo, boot) = (actions.clone(), pseudo.clone(), boot.clone());
        record(assert_gradcheck("n_step_q_loss", &q_data, |t, v| {
            losses::n_step_q_loss(t, v, &actions, &pseudo, &boot, gamma_pc).unwrap()
        }));
    }

    // reward prediction w.r.t. class logits
    {
        let logits = Tensor::from_vec(&[3], rand_vec(rng, 3, -1.0, 1.0)).unwrap();
        let class = match rng.gen_range(0..3) {
            0 => RewardClass::Zero,
            1 => RewardClass::Positive,
            _ => RewardClass::Negative,
        };
        record(assert_gradcheck("reward_prediction_loss", &[logits], |t, v| {
            losses::reward_prediction_loss(t, v[0], class).unwrap()
        }));
    }

    // the full weighted combination over independent leaves
    {
        let mut inputs: Vec<Tensor> = (0..steps)
            .map(|_| Tensor::from_vec(&[n_act], rand_vec(rng, n_act, -1.0, 1.0)).unwrap())
            .collect();
        let vr_base = inputs.len();
        inputs.extend((0..steps).map(|_| Tensor::scalar(rng.gen_range(-1.0..1.0))));
        let q_base = inputs.len();
        inputs.extend(q_data.iter().cloned());
        let rp_base = inputs.len();
        inputs.push(Tensor::from_vec(&[3], rand_vec(rng, 3, -1.0, 1.0)).unwrap());

        let values: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rets: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let acts: Vec<usize> = (0..steps).map(|_| rng.gen_range(0..n_act)).collect();
        let rewards: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights = LossWeights {
            lambda_vr: rng.gen_range(0.1..2.0),
            lambda_pc: rng.gen_range(0.01..0.1),
            lambda_rp: rng.gen_range(0.1..2.0),
            ..Default::default()
        };
        let (actions, pseudo, boot) = (acts, pseudo, boot);
        record(assert_gradcheck("unreal_loss", &inputs, |t, v| {
            let s: Vec<A3cStep> = (0..steps)
                .map(|i| A3cStep {
                    policy_logits: v[i],
                    value: t.constant_scalar(values[i]),
                    action: actions[i],
                    ret: rets[i],
                })
                .collect();
            let a3c = losses::a3c_loss(t, &s, 0.01).unwrap();
            let vr = losses::value_replay_loss(t, &v[vr_base..vr_base + steps], &rewards, 0.3, 0.99).unwrap();
            let pc = losses::n_step_q_loss(t, &v[q_base..q_base + steps], &actions, &pseudo, &boot, 0.9).unwrap();
            let rp = losses::reward_prediction_loss(t, v[rp_base], RewardClass::Positive).unwrap();
            losses::unreal_loss(t, a3c, Some(vr), Some(pc), None, Some(rp), &weights).unwrap()
        }));
    }

    (count, worst)
}

/// End-to-end network check: finite differences on randomly sampled
/// parameter coordinates of the full trunk plus auxiliary heads.
pub fn network_spot_check(seed: u64, coords: usize) -> f64 {
    let mut rng = seeded(seed);
    let preset = ArchPreset::tiny(5);
    let mut params = NetworkParams::init(preset.clone(), false, seed).unwrap();
    let pixels = rand_vec(&mut rng, 3 * preset.input_size * preset.input_size, 0.0, 1.0);
    let one_hot = {
        let mut v = vec![0.0; preset.n_act];
        v[rng.gen_range(0..preset.n_act)] = 1.0;
        v
    };
    let last_reward = rng.gen_range(-1.0..1.0);
    let wq = rand_vec(&mut rng, preset.n_act * preset.pc_grid * preset.pc_grid, -0.1, 0.1);

    let eval = |params: &NetworkParams, want_grads: bool| -> (f64, Option<NetworkParams>) {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let px = tape.constant(&[3, preset.input_size, preset.input_size], pixels.clone()).unwrap();
        let out = net::trunk_forward(&mut tape, &vars, &preset, px, &one_hot, last_reward, None).unwrap();
        let v2 = tape.mul(out.value, out.value).unwrap();
        let lp = tape.log_softmax(out.policy_logits).unwrap();
        let l2 = tape.mul(lp, lp).unwrap();
        let l2s = tape.sum(l2).unwrap();
        let q = net::pixel_control_head(&mut tape, &vars, &preset, out.lstm_output).unwrap();
        let qshape = tape.shape(q).to_vec();
        let qc = tape.constant(&qshape, wq.clone()).unwrap();
        let qw = tape.mul(q, qc).unwrap();
        let qs = tape.sum(qw).unwrap();
        let t1 = tape.add(v2, l2s).unwrap();
        let loss = tape.add(t1, qs).unwrap();
        let value = tape.scalar_value(loss);
        if want_grads {
            let grads = tape.backward(loss).unwrap();
            let mut p = params.clone();
            p.zero_grads();
            p.accumulate_grads(&vars, &grads);
            (value, Some(p))
        } else {
            (value, None)
        }
    };

    let (_, grads) = eval(&params, true);
    let grads = grads.unwrap();
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let name = &names[rng.gen_range(0..names.len())];
        let len = params.get(name).len();
        let j = rng.gen_range(0..len);
        let h = super::FD_H;
        let orig = params.get(name).data()[j];
        params.get_mut(name).data_mut()[j] = orig + h;
        let (fp, _) = eval(&params, false);
        params.get_mut(name).data_mut()[j] = orig - h;
        let (fm, _) = eval(&params, false);
        params.get_mut(name).data_mut()[j] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grads.get(name).grad().map_or(0.0, |g| g[j]);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        assert!(
            err < super::GRAD_TOL,
            "network spot check {name}[{j}]: rel err {err:e} (analytic {analytic}, numeric {numeric})"
        );
        worst = worst.max(err);
    }
    worst
}

/// The whole suite; returns (total randomized instances, worst rel error).
pub fn run_all(rounds: usize) -> (usize, f64) {
    let mut rng = seeded(0xC0FFEE);
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..rounds {
        let (c, e) = elementary_ops_once(&mut rng);
        total += c;
        worst = worst.max(e);
        let (c, e) = composite_losses_once(&mut rng);
        total += c;
        worst = worst.max(e);
    }
    worst = worst.max(network_spot_check(7, 30));
    total += 30;
    (total, worst)
}
