//! Bounded experience buffer with a rewarding-position side index for
//! skewed reward-prediction sampling, plus uniform same-episode sequence
//! sampling for value replay and pixel control.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardClass {
    Zero = 0,
    Positive = 1,
    Negative = 2,
}

impl RewardClass {
    pub fn of(reward: f64) -> Self {
        if reward > 0.0 {
            RewardClass::Positive
        } else if reward < 0.0 {
            RewardClass::Negative
        } else {
            RewardClass::Zero
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoredStep {
    pub observation: Observation,
    pub action: usize,
    pub reward: f64,
    /// Per-cell mean absolute pixel change from the previous frame,
    /// precomputed at insertion; zero at episode starts.
    pub pixel_pseudo_rewards: Tensor,
    /// True if this step ended its episode.
    pub episode_boundary: bool,
}

pub struct ReplayBuffer {
    capacity: usize,
    steps: VecDeque<StoredStep>,
    /// Global insertion ids of steps with nonzero reward.
    rewarding: BTreeSet<u64>,
    /// Global id of steps[0].
    base_id: u64,
    pc_crop: usize,
    pc_grid: usize,
}

pub struct RpSample {
    /// Buffer positions of the three frames preceding the target.
    pub frames: [usize; 3],
    pub target_class: RewardClass,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, pc_crop: usize, pc_grid: usize) -> Self {
        assert!(capacity > 0 && pc_grid > 0 && pc_crop % pc_grid == 0);
        ReplayBuffer {
            capacity,
            steps: VecDeque::with_capacity(capacity),
            rewarding: BTreeSet::new(),
            base_id: 0,
            pc_crop,
            pc_grid,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, pos: usize) -> &StoredStep {
        &self.steps[pos]
    }

    pub fn rewarding_fraction(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.rewarding.len() as f64 / self.steps.len() as f64
        }
    }

    /// Appends a step, computing its pixel pseudo-rewards against the
    /// previous stored frame. Evicts the oldest step at capacity.
    pub fn append(&mut self, observation: Observation, action: usize, reward: f64, episode_boundary: bool) {
        let pprew = match self.steps.back() {
            Some(prev) if !prev.episode_boundary => {
                compute_pixel_pseudo_rewards(&prev.observation.pixels, &observation.pixels, self.pc_crop, self.pc_grid)
                    .expect("buffer frames share one shape")
            }
            _ => Tensor::zeros(&[self.pc_grid, self.pc_grid]),
        };
        self.append_raw(StoredStep {
            observation,
            action,
            reward,
            pixel_pseudo_rewards: pprew,
            episode_boundary,
        });
    }

    pub fn append_raw(&mut self, step: StoredStep) {
        if self.steps.len() == self.capacity {
            self.steps.pop_front();
            self.rewarding.remove(&self.base_id);
            self.base_id += 1;
        }
        let id = self.base_id + self.steps.len() as u64;
        if step.reward != 0.0 {
            self.rewarding.insert(id);
        }
        self.steps.push_back(step);
    }

    /// Invariant check: the rewarding index must exactly equal the scan set.
    pub fn audit(&self) -> bool {
        let scan: BTreeSet<u64> = self
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.reward != 0.0)
            .map(|(i, _)| self.base_id + i as u64)
            .collect();
        scan == self.rewarding
    }

    fn rp_target_valid(&self, t: usize) -> bool {
        t >= 3
            && !self.steps[t - 1].episode_boundary
            && !self.steps[t - 2].episode_boundary
            && !self.steps[t - 3].episode_boundary
    }

    /// Skewed reward-prediction sample: with probability 0.5 the target step
    /// has nonzero reward; uniform within each subset. Returns the three
    /// frames preceding the target and the target's reward class.
    pub fn sample_rp<R: Rng>(&self, rng: &mut R) -> Result<RpSample> {
        let rewarding: Vec<usize> = self
            .rewarding
            .iter()
            .map(|&id| (id - self.base_id) as usize)
            .filter(|&t| self.rp_target_valid(t))
            .collect();
        let nonrewarding: Vec<usize> = (3..self.steps.len())
            .filter(|&t| self.steps[t].reward == 0.0 && self.rp_target_valid(t))
            .collect();
        if rewarding.is_empty() || nonrewarding.is_empty() {
            return Err(Error::InsufficientData { what: "reward-prediction sample" });
        }
        let pool = if rng.gen_bool(0.5) { &rewarding } else { &nonrewarding };
        let t = pool[rng.gen_range(0..pool.len())];
        Ok(RpSample {
            frames: [t - 3, t - 2, t - 1],
            target_class: RewardClass::of(self.steps[t].reward),
        })
    }

    fn window_valid(&self, start: usize, len: usize) -> bool {
        // boundaries may appear only at the last transition (len-2) or the
        // trailing bootstrap frame (len-1); anything earlier would put part
        // of the window in a different episode
        if len >= 2 {
            for i in start..start + len - 2 {
                if self.steps[i].episode_boundary {
                    return false;
                }
            }
        }
        true
    }

    pub fn valid_starts(&self, len: usize) -> Vec<usize> {
        if len == 0 || self.steps.len() < len {
            return Vec::new();
        }
        (0..=self.steps.len() - len)
            .filter(|&s| self.window_valid(s, len))
            .collect()
    }

    /// Uniformly random truncation window of `len` consecutive steps that
    /// never crosses an episode boundary. Returns the start position.
    pub fn sample_sequence<R: Rng>(&self, len: usize, rng: &mut R) -> Result<usize> {
        let starts = self.valid_starts(len);
        if starts.is_empty() {
            return Err(Error::InsufficientData { what: "replay sequence" });
        }
        Ok(starts[rng.gen_range(0..starts.len())])
    }
}

/// Mean absolute per-cell pixel change over the central crop: for each of
/// the grid x grid non-overlapping cells, the average over cell pixels and
/// channels of |cur - prev|.
pub fn compute_pixel_pseudo_rewards(prev: &Tensor, cur: &Tensor, crop: usize, grid: usize) -> Result<Tensor> {
    if prev.shape() != cur.shape() {
        return Err(Error::shape("compute_pixel_pseudo_rewards", prev.shape(), cur.shape()));
    }
    let shape = prev.shape();
    if shape.len() != 3 {
        return Err(Error::shape("compute_pixel_pseudo_rewards", "[C,H,W]", shape));
    }
    let (channels, h, w) = (shape[0], shape[1], shape[2]);
    if crop > h || crop > w || grid == 0 || crop % grid != 0 {
        return Err(Error::shape("compute_pixel_pseudo_rewards", "crop within image, divisible by grid", (crop, grid)));
    }
    let (off_r, off_c) = ((h - crop) / 2, (w - crop) / 2);
    let cell = crop / grid;
    let mut out = vec![0.0; grid * grid];
    let plane = h * w;
    for gi in 0..grid {
        for gj in 0..grid {
            let mut acc = 0.0;
            for ch in 0..channels {
                for pr in 0..cell {
                    let row = off_r + gi * cell + pr;
                    let base = ch * plane + row * w + off_c + gj * cell;
                    for px in 0..cell {
                        acc += (cur.data()[base + px] - prev.data()[base + px]).abs();
                    }
                }
            }
            out[gi * grid + gj] = acc / (channels * cell * cell) as f64;
        }
    }
    Tensor::from_vec(&[grid, grid], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(fill: f64) -> Observation {
        Observation {
            pixels: Tensor::from_vec(&[3, 8, 8], vec![fill; 3 * 64]).unwrap(),
            last_action: None,
            last_reward: 0.0,
        }
    }

    fn buffer_with(capacity: usize, rewards: &[f64]) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(capacity, 8, 4);
        for &r in rewards {
            buf.append(obs(0.0), 0, r, false);
        }
        buf
    }

    #[test]
    fn eviction_keeps_most_recent() {
        let mut buf = ReplayBuffer::new(2000, 8, 4);
        for i in 0..2001 {
            buf.append(obs(i as f64 / 2001.0), 0, if i == 0 { 5.0 } else { 0.0 }, false);
        }
        assert_eq!(buf.len(), 2000);
        // the single rewarding step was the first one, now evicted
        assert_eq!(buf.rewarding_fraction(), 0.0);
        assert!(buf.audit());
    }

    #[test]
    fn zero_reward_append_leaves_rewarding_index_unchanged() {
        let mut buf = buffer_with(10, &[1.0]);
        let before = buf.rewarding_fraction() * buf.len() as f64;
        buf.append(obs(0.1), 0, 0.0, false);
        assert_eq!(buf.rewarding_fraction() * buf.len() as f64, before);
        assert!(buf.audit());
    }

    #[test]
    fn rp_requires_both_subsets() {
        let buf = buffer_with(50, &[0.0; 20]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample_rp(&mut rng), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn rp_classes_follow_target_sign() {
        let mut buf = ReplayBuffer::new(50, 8, 4);
        for _ in 0..5 {
            buf.append(obs(0.0), 0, 0.0, false);
        }
        buf.append(obs(0.0), 0, -1.0, false);
        for _ in 0..3 {
            buf.append(obs(0.0), 0, 0.0, false);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut saw_negative = false;
        for _ in 0..50 {
            let s = buf.sample_rp(&mut rng).unwrap();
            if s.target_class == RewardClass::Negative {
                saw_negative = true;
                assert_eq!(s.frames, [2, 3, 4]);
            }
        }
        assert!(saw_negative);
    }

    #[test]
    fn rp_window_never_contains_boundary() {
        let mut buf = ReplayBuffer::new(50, 8, 4);
        // episode of 4 steps then a rewarding target right after the boundary
        for i in 0..4 {
            buf.append(obs(0.0), 0, 0.0, i == 3);
        }
        buf.append(obs(0.0), 0, 2.0, false); // target would need frames inside old episode
        for _ in 0..5 {
            buf.append(obs(0.0), 0, 0.0, false);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // the only rewarding target (pos 4) has a boundary at pos 3 -> invalid
        assert!(matches!(buf.sample_rp(&mut rng), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn unique_window_when_exactly_len_steps() {
        let buf = buffer_with(50, &[0.0; 20]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(buf.sample_sequence(20, &mut rng).unwrap(), 0);
        assert_eq!(buf.valid_starts(20), vec![0]);
    }

    #[test]
    fn windows_crossing_boundaries_are_invalid() {
        let mut buf = ReplayBuffer::new(50, 8, 4);
        for i in 0..30 {
            buf.append(obs(0.0), 0, 0.0, i == 10);
        }
        // any 20-window must include position 10 strictly inside -> none valid
        let valid = buf.valid_starts(20);
        assert!(valid.is_empty(), "{valid:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(buf.sample_sequence(20, &mut rng), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn boundary_at_window_end_is_allowed() {
        let mut buf = ReplayBuffer::new(50, 8, 4);
        for i in 0..5 {
            buf.append(obs(0.0), 0, 0.0, i == 3);
        }
        // window [0..=4] of len 5: boundary at position 3 == len-2 -> valid
        assert_eq!(buf.valid_starts(5), vec![0]);
    }

    #[test]
    fn pseudo_rewards_identical_frames_zero() {
        let a = obs(0.5).pixels;
        let out = compute_pixel_pseudo_rewards(&a, &a, 8, 4).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pseudo_rewards_constant_difference() {
        let a = obs(0.0).pixels;
        let b = obs(1.0).pixels;
        let out = compute_pixel_pseudo_rewards(&a, &b, 8, 4).unwrap();
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn pseudo_rewards_channel_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        use rand::Rng;
        let n = 3 * 64;
        let pa: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let pb: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let permute = |v: &[f64]| {
            // rotate channels 0,1,2 -> 2,0,1
            let mut out = vec![0.0; n];
            out[..64].copy_from_slice(&v[2 * 64..]);
            out[64..2 * 64].copy_from_slice(&v[..64]);
            out[2 * 64..].copy_from_slice(&v[64..2 * 64]);
            out
        };
        let a = Tensor::from_vec(&[3, 8, 8], pa.clone()).unwrap();
        let b = Tensor::from_vec(&[3, 8, 8], pb.clone()).unwrap();
        let ap = Tensor::from_vec(&[3, 8, 8], permute(&pa)).unwrap();
        let bp = Tensor::from_vec(&[3, 8, 8], permute(&pb)).unwrap();
        let o1 = compute_pixel_pseudo_rewards(&a, &b, 8, 4).unwrap();
        let o2 = compute_pixel_pseudo_rewards(&ap, &bp, 8, 4).unwrap();
        for (x, y) in o1.data().iter().zip(o2.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn audit_after_random_appends_with_eviction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        use rand::Rng;
        let mut buf = ReplayBuffer::new(100, 8, 4);
        for _ in 0..5000 {
            let r = if rng.gen_bool(0.1) {
                if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
            } else {
                0.0
            };
            buf.append(obs(0.0), rng.gen_range(0..5), r, rng.gen_bool(0.05));
        }
        assert!(buf.audit());
    }
}
