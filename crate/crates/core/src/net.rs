//! Shared CNN-LSTM trunk with policy/value heads plus the auxiliary heads:
//! the dueling deconvolutional pixel-control head, the reward-prediction
//! classifier and the (optional) feature-control head. All heads share the
//! conv parameters with the trunk by registering the same tensors as tape
//! leaves once per update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchPreset {
    pub name: String,
    /// Input is 3 x input_size x input_size.
    pub input_size: usize,
    /// (filters, kernel, stride)
    pub conv1: (usize, usize, usize),
    pub conv2: (usize, usize, usize),
    pub fc_size: usize,
    pub lstm_size: usize,
    /// Central crop side used by pixel control.
    pub pc_crop: usize,
    /// Pixel-control cell grid side n (Q^aux is N_act x n x n).
    pub pc_grid: usize,
    /// Channels of the spatial map bridging LSTM output to the deconvs.
    pub pc_bridge_channels: usize,
    pub rp_fc_size: usize,
    pub n_act: usize,
}

impl ArchPreset {
    pub fn paper(n_act: usize) -> Self {
        ArchPreset {
            name: "paper".into(),
            input_size: 84,
            conv1: (16, 8, 4),
            conv2: (32, 4, 2),
            fc_size: 256,
            lstm_size: 256,
            pc_crop: 80,
            pc_grid: 20,
            pc_bridge_channels: 32,
            rp_fc_size: 128,
            n_act,
        }
    }

    pub fn desk(n_act: usize) -> Self {
        ArchPreset {
            name: "desk".into(),
            input_size: 36,
            conv1: (8, 4, 2),
            conv2: (16, 3, 1),
            fc_size: 64,
            lstm_size: 64,
            pc_crop: 32,
            pc_grid: 8,
            pc_bridge_channels: 16,
            rp_fc_size: 128,
            n_act,
        }
    }

    pub fn tiny(n_act: usize) -> Self {
        ArchPreset {
            name: "tiny".into(),
            input_size: 20,
            conv1: (8, 4, 2),
            conv2: (16, 3, 1),
            fc_size: 32,
            lstm_size: 32,
            pc_crop: 16,
            pc_grid: 8,
            pc_bridge_channels: 16,
            rp_fc_size: 64,
            n_act,
        }
    }

    pub fn by_name(name: &str, n_act: usize) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(n_act)),
            "desk" => Ok(Self::desk(n_act)),
            "tiny" => Ok(Self::tiny(n_act)),
            other => Err(Error::ConfigInvalid(format!("unknown preset '{other}'"))),
        }
    }

    pub fn conv1_out(&self) -> usize {
        (self.input_size - self.conv1.1) / self.conv1.2 + 1
    }

    pub fn conv2_out(&self) -> usize {
        (self.conv1_out() - self.conv2.1) / self.conv2.2 + 1
    }

    pub fn conv2_flat(&self) -> usize {
        self.conv2.0 * self.conv2_out() * self.conv2_out()
    }

    pub fn lstm_input(&self) -> usize {
        self.fc_size + self.n_act + 1
    }

    /// Side of the spatial bridge map: one 4x4 stride-2 deconv must land
    /// exactly on the pixel-control grid, (b-1)*2 + 4 == pc_grid.
    pub fn pc_bridge_side(&self) -> usize {
        (self.pc_grid - 4) / 2 + 1
    }

    /// The whole shape chain must close; asserted at construction time of
    /// the parameter set.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::ConfigInvalid(format!("preset '{}': {msg}", self.name)))
            }
        };
        check(self.input_size >= self.conv1.1, "conv1 kernel larger than input")?;
        check(self.conv1_out() >= self.conv2.1, "conv2 kernel larger than conv1 output")?;
        check(self.pc_grid >= 4 && (self.pc_grid - 4) % 2 == 0, "pc_grid incompatible with 4x4 stride-2 deconv")?;
        check((self.pc_bridge_side() - 1) * 2 + 4 == self.pc_grid, "deconv output does not land on pc_grid")?;
        check(self.pc_crop <= self.input_size, "pc_crop exceeds input")?;
        check(self.pc_crop % self.pc_grid == 0, "pc_crop not divisible by pc_grid")?;
        check(self.n_act >= 1, "n_act must be >= 1")?;
        Ok(())
    }
}

/// Recurrent state carried between unrolls; reset to zeros at episode
/// boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(lstm_size: usize) -> Self {
        RecurrentState { hidden: vec![0.0; lstm_size], cell: vec![0.0; lstm_size] }
    }
}

/// Named map of all weight tensors; construction order is fixed so that
/// optimizer traversals and checkpoints are deterministic.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub preset: ArchPreset,
    entries: Vec<(String, Tensor)>,
}

/// Tape handles for every parameter, created once per update via
/// [`NetworkParams::register`].
pub struct ParamVars {
    vars: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

fn uniform_fan_in(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

/// Orthogonal square matrix via Gram-Schmidt on a Gaussian sample.
fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let normal = |rng: &mut ChaCha8Rng| {
        // Box-Muller
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| normal(rng)).collect()).collect();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let rj = rows[j].clone();
            for (a, b) in rows[i].iter_mut().zip(rj) {
                *a -= d * b;
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        rows[i].iter_mut().for_each(|v| *v /= norm);
    }
    rows.concat()
}

impl NetworkParams {
    /// Fresh parameters: scaled-uniform fan-in for conv/fc, orthogonal
    /// recurrent blocks, zero biases except the forget gate at +1.
    pub fn init(preset: ArchPreset, include_feature_control: bool, seed: u64) -> Result<Self> {
        preset.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &preset;
        let (c1f, c1k, _) = p.conv1;
        let (c2f, c2k, _) = p.conv2;
        let h = p.lstm_size;
        let bridge = p.pc_bridge_channels * p.pc_bridge_side() * p.pc_bridge_side();

        let mut entries: Vec<(String, Tensor)> = Vec::new();
        let push = |entries: &mut Vec<(String, Tensor)>, name: &str, t: Tensor| {
            entries.push((name.to_string(), t));
        };

        push(&mut entries, "conv1.w", uniform_fan_in(&mut rng, &[c1f, 3, c1k, c1k], 3 * c1k * c1k));
        push(&mut entries, "conv1.b", Tensor::zeros(&[c1f]));
        push(&mut entries, "conv2.w", uniform_fan_in(&mut rng, &[c2f, c1f, c2k, c2k], c1f * c2k * c2k));
        push(&mut entries, "conv2.b", Tensor::zeros(&[c2f]));
        push(&mut entries, "fc.w", uniform_fan_in(&mut rng, &[p.fc_size, p.conv2_flat()], p.conv2_flat()));
        push(&mut entries, "fc.b", Tensor::zeros(&[p.fc_size]));

        push(&mut entries, "lstm.wx", uniform_fan_in(&mut rng, &[4 * h, p.lstm_input()], p.lstm_input()));
        let wh: Vec<f64> = (0..4).flat_map(|_| orthogonal(&mut rng, h)).collect();
        push(&mut entries, "lstm.wh", Tensor::from_vec(&[4 * h, h], wh)?);
        let mut lstm_b = vec![0.0; 4 * h];
        lstm_b[h..2 * h].iter_mut().for_each(|v| *v = 1.0); // forget gate bias
        push(&mut entries, "lstm.b", Tensor::from_vec(&[4 * h], lstm_b)?);

        push(&mut entries, "policy.w", uniform_fan_in(&mut rng, &[p.n_act, h], h));
        push(&mut entries, "policy.b", Tensor::zeros(&[p.n_act]));
        push(&mut entries, "value.w", uniform_fan_in(&mut rng, &[1, h], h));
        push(&mut entries, "value.b", Tensor::zeros(&[1]));

        push(&mut entries, "pc.fc.w", uniform_fan_in(&mut rng, &[bridge, h], h));
        push(&mut entries, "pc.fc.b", Tensor::zeros(&[bridge]));
        let bc = p.pc_bridge_channels;
        push(&mut entries, "pc.deconv.v.w", uniform_fan_in(&mut rng, &[bc, 1, 4, 4], bc * 16));
        push(&mut entries, "pc.deconv.v.b", Tensor::zeros(&[1]));
        push(&mut entries, "pc.deconv.a.w", uniform_fan_in(&mut rng, &[bc, p.n_act, 4, 4], bc * 16));
        push(&mut entries, "pc.deconv.a.b", Tensor::zeros(&[p.n_act]));

        push(&mut entries, "rp.fc.w", uniform_fan_in(&mut rng, &[p.rp_fc_size, 3 * p.conv2_flat()], 3 * p.conv2_flat()));
        push(&mut entries, "rp.fc.b", Tensor::zeros(&[p.rp_fc_size]));
        push(&mut entries, "rp.out.w", uniform_fan_in(&mut rng, &[3, p.rp_fc_size], p.rp_fc_size));
        push(&mut entries, "rp.out.b", Tensor::zeros(&[3]));

        if include_feature_control {
            push(&mut entries, "fc_ctrl.v.w", uniform_fan_in(&mut rng, &[c2f, h], h));
            push(&mut entries, "fc_ctrl.v.b", Tensor::zeros(&[c2f]));
            push(&mut entries, "fc_ctrl.a.w", uniform_fan_in(&mut rng, &[p.n_act * c2f, h], h));
            push(&mut entries, "fc_ctrl.a.b", Tensor::zeros(&[p.n_act * c2f]));
        }

        Ok(NetworkParams { preset, entries })
    }

    pub fn from_entries(preset: ArchPreset, entries: Vec<(String, Tensor)>) -> Self {
        NetworkParams { preset, entries }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
            .1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), &mut *t))
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    /// Registers every parameter as a differentiable tape leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            vars: self.entries.iter().map(|(n, t)| (n.clone(), tape.leaf(t))).collect(),
        }
    }

    /// Adds the backward pass's leaf gradients into each tensor's grad slot.
    pub fn accumulate_grads(&mut self, vars: &ParamVars, grads: &Gradients) {
        for (name, var) in &vars.vars {
            if let Some(g) = grads.get(*var) {
                self.get_mut(name).accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }
}

pub struct TrunkOutput {
    pub policy_logits: Var,
    /// Shape [1].
    pub value: Var,
    pub hidden: Var,
    pub cell: Var,
    pub conv2_features: Var,
    pub lstm_output: Var,
}

/// Shared conv encoder: conv1 + relu, conv2 + relu.
pub fn encode_conv(tape: &mut Tape, vars: &ParamVars, preset: &ArchPreset, pixels: Var) -> Result<Var> {
    let expected = [3, preset.input_size, preset.input_size];
    if tape.shape(pixels) != expected {
        return Err(Error::shape("encode_conv", &expected, tape.shape(pixels)));
    }
    let c1 = tape.conv2d(pixels, vars.get("conv1.w"), preset.conv1.2)?;
    let c1 = tape.add_bias(c1, vars.get("conv1.b"))?;
    let c1 = tape.relu(c1)?;
    let c2 = tape.conv2d(c1, vars.get("conv2.w"), preset.conv2.2)?;
    let c2 = tape.add_bias(c2, vars.get("conv2.b"))?;
    tape.relu(c2)
}

/// One step of the shared trunk. The reward fed to the LSTM is clipped to
/// [-1, 1]; `rec` is None at episode start (zero state).
pub fn trunk_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    preset: &ArchPreset,
    pixels: Var,
    last_action_one_hot: &[f64],
    last_reward: f64,
    rec: Option<(Var, Var)>,
) -> Result<TrunkOutput> {
    if last_action_one_hot.len() != preset.n_act {
        return Err(Error::shape("trunk_forward", preset.n_act, last_action_one_hot.len()));
    }
    let conv2_features = encode_conv(tape, vars, preset, pixels)?;
    let flat = tape.reshape(conv2_features, &[preset.conv2_flat()])?;
    let fc = tape.matvec(vars.get("fc.w"), flat)?;
    let fc = tape.add(fc, vars.get("fc.b"))?;
    let fc = tape.relu(fc)?;

    let mut extra = last_action_one_hot.to_vec();
    extra.push(last_reward.clamp(-1.0, 1.0));
    let extra = tape.constant(&[preset.n_act + 1], extra)?;
    let lstm_in = tape.concat(&[fc, extra])?;

    let (h_prev, c_prev) = match rec {
        Some(rc) => rc,
        None => {
            let z = tape.constant(&[preset.lstm_size], vec![0.0; preset.lstm_size])?;
            (z, z)
        }
    };
    let (hidden, cell) = lstm_step(tape, vars, preset, lstm_in, h_prev, c_prev)?;

    let logits0 = tape.matvec(vars.get("policy.w"), hidden)?;
    let policy_logits = tape.add(logits0, vars.get("policy.b"))?;
    let value0 = tape.matvec(vars.get("value.w"), hidden)?;
    let value = tape.add(value0, vars.get("value.b"))?;

    Ok(TrunkOutput {
        policy_logits,
        value,
        hidden,
        cell,
        conv2_features,
        lstm_output: hidden,
    })
}

/// LSTM with forget gates; gate block order in the stacked weights is
/// input, forget, candidate, output.
fn lstm_step(
    tape: &mut Tape,
    vars: &ParamVars,
    preset: &ArchPreset,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let h = preset.lstm_size;
    let zx = tape.matvec(vars.get("lstm.wx"), x)?;
    let zh = tape.matvec(vars.get("lstm.wh"), h_prev)?;
    let z0 = tape.add(zx, zh)?;
    let z = tape.add(z0, vars.get("lstm.b"))?;

    let zi = tape.slice(z, 0, &[h])?;
    let zf = tape.slice(z, h, &[h])?;
    let zg = tape.slice(z, 2 * h, &[h])?;
    let zo = tape.slice(z, 3 * h, &[h])?;

    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;

    let fc_ = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let cell = tape.add(fc_, ig)?;
    let ct = tape.tanh(cell)?;
    let hidden = tape.mul(o, ct)?;
    Ok((hidden, cell))
}

/// Dueling combine Q = V + A - mean_a A over the leading (action) axis.
fn dueling(tape: &mut Tape, value: Var, adv: Var, n_act: usize) -> Result<Var> {
    let v = tape.mean_first_dim(value)?; // [1,...] -> [...]
    let mean_a = tape.mean_first_dim(adv)?;
    let centered_base = tape.sub(v, mean_a)?;
    let broadcast = tape.broadcast_first_dim(centered_base, n_act)?;
    tape.add(adv, broadcast)
}

/// Q^aux over the pixel-control grid: linear+relu spatial bridge, then a
/// 1-filter value deconv and an N_act-filter advantage deconv, combined with
/// the dueling parametrization.
pub fn pixel_control_head(tape: &mut Tape, vars: &ParamVars, preset: &ArchPreset, lstm_output: Var) -> Result<Var> {
    if tape.value(lstm_output).len() != preset.lstm_size {
        return Err(Error::shape("pixel_control_head", preset.lstm_size, tape.value(lstm_output).len()));
    }
    let b = preset.pc_bridge_side();
    let bc = preset.pc_bridge_channels;
    let z = tape.matvec(vars.get("pc.fc.w"), lstm_output)?;
    let z = tape.add(z, vars.get("pc.fc.b"))?;
    let z = tape.relu(z)?;
    let spatial = tape.reshape(z, &[bc, b, b])?;

    let v = tape.deconv2d(spatial, vars.get("pc.deconv.v.w"), 2)?;
    let v = tape.add_bias(v, vars.get("pc.deconv.v.b"))?;
    let a = tape.deconv2d(spatial, vars.get("pc.deconv.a.w"), 2)?;
    let a = tape.add_bias(a, vars.get("pc.deconv.a.b"))?;
    dueling(tape, v, a, preset.n_act)
}

/// Three-class reward sign logits from three stacked observations encoded
/// with the shared conv weights.
pub fn reward_prediction_head(tape: &mut Tape, vars: &ParamVars, preset: &ArchPreset, obs: &[Var]) -> Result<Var> {
    if obs.len() != 3 {
        return Err(Error::shape("reward_prediction_head", 3usize, obs.len()));
    }
    let mut encoded = Vec::with_capacity(3);
    for &px in obs {
        let feat = encode_conv(tape, vars, preset, px)?;
        encoded.push(tape.reshape(feat, &[preset.conv2_flat()])?);
    }
    let cat = tape.concat(&encoded)?;
    let fc = tape.matvec(vars.get("rp.fc.w"), cat)?;
    let fc = tape.add(fc, vars.get("rp.fc.b"))?;
    let fc = tape.relu(fc)?;
    let out = tape.matvec(vars.get("rp.out.w"), fc)?;
    tape.add(out, vars.get("rp.out.b"))
}

/// Q-values for increasing each conv2 channel-mean activation; linear
/// dueling head over [N_act, channels]. Experimental, off by default.
pub fn feature_control_head(tape: &mut Tape, vars: &ParamVars, preset: &ArchPreset, lstm_output: Var) -> Result<Var> {
    let c2 = preset.conv2.0;
    let v = tape.matvec(vars.get("fc_ctrl.v.w"), lstm_output)?;
    let v = tape.add(v, vars.get("fc_ctrl.v.b"))?;
    let v = tape.reshape(v, &[1, c2])?;
    let a = tape.matvec(vars.get("fc_ctrl.a.w"), lstm_output)?;
    let a = tape.add(a, vars.get("fc_ctrl.a.b"))?;
    let a = tape.reshape(a, &[preset.n_act, c2])?;
    dueling(tape, v, a, preset.n_act)
}

/// Channel-mean activations of conv2 features, the feature-control
/// pseudo-reward basis.
pub fn channel_means(features: &[f64], channels: usize) -> Vec<f64> {
    let plane = features.len() / channels;
    features
        .chunks_exact(plane)
        .map(|c| c.iter().sum::<f64>() / plane as f64)
        .collect()
}
