//! Procedurally generated pixel gridworlds.
//!
//! Observations are egocentric: a (2v+1) x (2v+1) cell window centered on
//! the agent, rotated so the agent's heading points up, upscaled to
//! `render_size` pixels and returned as a 3 x R x R tensor in [0,1].
//! Everything is deterministic in (spec, episode seed, action sequence).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::{generate_maze, WallMap};
use crate::tensor::Tensor;

pub const REWARD_APPLE: f64 = 1.0;
pub const REWARD_LEMON: f64 = -1.0;
pub const REWARD_GOAL: f64 = 10.0;
pub const REWARD_MELON: f64 = 10.0;

const COLOR_WALL: [f64; 3] = [0.5, 0.5, 0.5];
const COLOR_FLOOR: [f64; 3] = [0.0, 0.0, 0.0];
const COLOR_APPLE: [f64; 3] = [1.0, 0.0, 0.0];
const COLOR_LEMON: [f64; 3] = [1.0, 1.0, 0.0];
const COLOR_GOAL: [f64; 3] = [0.0, 1.0, 0.0];
const COLOR_AGENT: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    FruitStatic,
    NavStatic,
    NavRandomGoal,
    NavAllRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelSpec {
    pub category: Category,
    pub grid_size: usize,
    /// External environment steps per episode.
    pub episode_length: usize,
    pub render_size: usize,
    /// Egocentric view radius in cells; the window is (2v+1) per side.
    pub view_radius: usize,
    /// Level seed: fixes whatever the category keeps constant across episodes.
    pub seed: u64,
    /// Fraction of open cells holding apples / lemons.
    pub apple_density: f64,
    pub lemon_density: f64,
    pub action_repeat: usize,
    pub n_act: usize,
}

impl Default for LevelSpec {
    fn default() -> Self {
        LevelSpec {
            category: Category::NavAllRandom,
            grid_size: 9,
            episode_length: 300,
            render_size: 36,
            view_radius: 4,
            seed: 0,
            apple_density: 0.1,
            lemon_density: 0.0,
            action_repeat: 4,
            n_act: 5,
        }
    }
}

impl LevelSpec {
    pub fn window_cells(&self) -> usize {
        2 * self.view_radius + 1
    }

    pub fn cell_px(&self) -> usize {
        self.render_size / self.window_cells()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.grid_size < 5 || self.grid_size % 2 == 0 {
            problems.push(format!("level.grid_size must be odd and >= 5, got {}", self.grid_size));
        }
        if self.episode_length == 0 {
            problems.push("level.episode_length must be positive".into());
        }
        if self.render_size == 0 || self.render_size % self.window_cells() != 0 {
            problems.push(format!(
                "level.render_size ({}) must be a positive multiple of the view window side ({})",
                self.render_size,
                self.window_cells()
            ));
        }
        if self.view_radius == 0 {
            problems.push("level.view_radius must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.apple_density) || !(0.0..1.0).contains(&self.lemon_density) {
            problems.push("level densities must be in [0,1)".into());
        }
        if self.action_repeat == 0 {
            problems.push("level.action_repeat must be >= 1".into());
        }
        if self.n_act == 0 || self.n_act > 16 {
            problems.push(format!("level.n_act must be in 1..=16, got {}", self.n_act));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Item {
    Apple,
    Lemon,
    Melon,
    Goal,
}

impl Item {
    fn reward(self) -> f64 {
        match self {
            Item::Apple => REWARD_APPLE,
            Item::Lemon => REWARD_LEMON,
            Item::Melon => REWARD_MELON,
            Item::Goal => REWARD_GOAL,
        }
    }

    fn color(self) -> [f64; 3] {
        match self {
            Item::Apple => COLOR_APPLE,
            Item::Lemon => COLOR_LEMON,
            Item::Melon | Item::Goal => COLOR_GOAL,
        }
    }
}

/// Heading: 0 = north (up / -row), 1 = east, 2 = south, 3 = west.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heading(pub u8);

impl Heading {
    fn forward(self) -> (isize, isize) {
        match self.0 {
            0 => (-1, 0),
            1 => (0, 1),
            2 => (1, 0),
            _ => (0, -1),
        }
    }
    fn right(self) -> (isize, isize) {
        Heading((self.0 + 1) % 4).forward()
    }
    fn turn_left(self) -> Heading {
        Heading((self.0 + 3) % 4)
    }
    fn turn_right(self) -> Heading {
        Heading((self.0 + 1) % 4)
    }
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub maze: WallMap,
    pub agent_pos: (usize, usize),
    pub agent_heading: Heading,
    pub items: Vec<((usize, usize), Item)>,
    pub steps_elapsed: usize,
    pub episode_return: f64,
    rng: ChaCha8Rng,
    done: bool,
}

#[derive(Debug, Clone)]
pub struct Observation {
    /// 3 x render_size x render_size, values in [0,1].
    pub pixels: Tensor,
    /// Action taken on the previous step; None at episode start (all-zero one-hot).
    pub last_action: Option<usize>,
    pub last_reward: f64,
}

impl Observation {
    pub fn action_one_hot(&self, n_act: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_act];
        if let Some(a) = self.last_action {
            v[a] = 1.0;
        }
        v
    }
}

pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

pub struct GridEnv {
    pub spec: LevelSpec,
    state: Option<EnvState>,
}

impl GridEnv {
    pub fn new(spec: LevelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(GridEnv { spec, state: None })
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Starts a new episode. Category semantics: what the level seed fixes
    /// stays fixed across episodes, the rest is resampled per episode.
    pub fn reset(&mut self, episode_seed: u64) -> Result<Observation> {
        let spec = &self.spec;
        let mut episode_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ episode_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));

        let (maze, mut items) = match spec.category {
            Category::FruitStatic => {
                let maze = WallMap::open_arena(spec.grid_size)?;
                let items = place_fruit(&maze, spec);
                (maze, items)
            }
            Category::NavStatic => {
                let maze = generate_maze(spec.grid_size, spec.seed)?;
                let goal = pick_cell(&maze, &mut ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1)), &[]);
                (maze, vec![(goal, Item::Goal)])
            }
            Category::NavRandomGoal => {
                let maze = generate_maze(spec.grid_size, spec.seed)?;
                let goal = pick_cell(&maze, &mut episode_rng, &[]);
                (maze, vec![(goal, Item::Goal)])
            }
            Category::NavAllRandom => {
                let maze = generate_maze(spec.grid_size, episode_seed.wrapping_add(spec.seed))?;
                let goal = pick_cell(&maze, &mut episode_rng, &[]);
                (maze, vec![(goal, Item::Goal)])
            }
        };

        let occupied: Vec<(usize, usize)> = items.iter().map(|&(p, _)| p).collect();
        let agent_pos = pick_cell(&maze, &mut episode_rng, &occupied);
        let agent_heading = Heading(episode_rng.gen_range(0..4));
        items.retain(|&(p, _)| p != agent_pos);

        let state = EnvState {
            maze,
            agent_pos,
            agent_heading,
            items,
            steps_elapsed: 0,
            episode_return: 0.0,
            rng: episode_rng,
            done: false,
        };
        let pixels = render(&state, spec);
        self.state = Some(state);
        Ok(Observation { pixels, last_action: None, last_reward: 0.0 })
    }

    /// One external step: the action is applied `action_repeat` times
    /// (turns only once; a repeated quarter-turn would cancel itself).
    /// Blocked moves are no-ops. Rewards accumulate across repeats.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let spec = self.spec.clone();
        if action >= spec.n_act {
            return Err(Error::ActionOutOfRange { action, n_act: spec.n_act });
        }
        let state = self.state.as_mut().ok_or(Error::StepAfterDone)?;
        if state.done {
            return Err(Error::StepAfterDone);
        }

        let mut reward = 0.0;
        for repeat in 0..spec.action_repeat {
            match action {
                0 | 1 => {
                    let (dr, dc) = state.agent_heading.forward();
                    let (dr, dc) = if action == 0 { (dr, dc) } else { (-dr, -dc) };
                    let (nr, nc) = (state.agent_pos.0 as isize + dr, state.agent_pos.1 as isize + dc);
                    if !state.maze.is_wall(nr, nc) {
                        state.agent_pos = (nr as usize, nc as usize);
                        reward += consume_items(state);
                    }
                }
                2 if repeat == 0 => state.agent_heading = state.agent_heading.turn_left(),
                3 if repeat == 0 => state.agent_heading = state.agent_heading.turn_right(),
                _ => {}
            }
        }

        state.steps_elapsed += 1;
        state.episode_return += reward;
        let done = state.steps_elapsed >= spec.episode_length;
        state.done = done;
        let pixels = render(state, &spec);
        Ok(StepOutcome {
            observation: Observation { pixels, last_action: Some(action), last_reward: reward },
            reward,
            done,
        })
    }

    pub fn render_pixels(&self) -> Option<Tensor> {
        self.state.as_ref().map(|s| render(s, &self.spec))
    }
}

fn consume_items(state: &mut EnvState) -> f64 {
    let pos = state.agent_pos;
    let mut reward = 0.0;
    let mut respawn = false;
    state.items.retain(|&(p, item)| {
        if p != pos {
            return true;
        }
        reward += item.reward();
        match item {
            Item::Goal => {
                respawn = true;
                true // goal persists
            }
            _ => false,
        }
    });
    if respawn {
        let occupied: Vec<(usize, usize)> = state.items.iter().map(|&(p, _)| p).collect();
        state.agent_pos = pick_cell_rng(&state.maze, &mut state.rng, &occupied);
    }
    reward
}

fn pick_cell(maze: &WallMap, rng: &mut ChaCha8Rng, occupied: &[(usize, usize)]) -> (usize, usize) {
    pick_cell_rng(maze, rng, occupied)
}

fn pick_cell_rng(maze: &WallMap, rng: &mut ChaCha8Rng, occupied: &[(usize, usize)]) -> (usize, usize) {
    let open: Vec<(usize, usize)> = maze
        .open_cells()
        .into_iter()
        .filter(|p| !occupied.contains(p))
        .collect();
    *open.choose(rng).expect("maze has open cells")
}

fn place_fruit(maze: &WallMap, spec: &LevelSpec) -> Vec<((usize, usize), Item)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
    let mut open = maze.open_cells();
    open.shuffle(&mut rng);
    let total = open.len();
    let n_apples = ((spec.apple_density * total as f64).round() as usize).max(1);
    let n_lemons = (spec.lemon_density * total as f64).round() as usize;
    let mut items = Vec::new();
    let mut it = open.into_iter();
    for _ in 0..n_apples {
        if let Some(p) = it.next() {
            items.push((p, Item::Apple));
        }
    }
    for _ in 0..n_lemons {
        if let Some(p) = it.next() {
            items.push((p, Item::Lemon));
        }
    }
    if let Some(p) = it.next() {
        items.push((p, Item::Melon));
    }
    items
}

/// Egocentric heading-up rendering; cells outside the maze show as wall.
pub fn render(state: &EnvState, spec: &LevelSpec) -> Tensor {
    let window = spec.window_cells();
    let cp = spec.cell_px();
    let r_size = spec.render_size;
    let v = spec.view_radius as isize;
    let plane = r_size * r_size;
    let mut data = vec![0.0; 3 * plane];

    let fwd = state.agent_heading.forward();
    let right = state.agent_heading.right();

    for wr in 0..window {
        let f = v - wr as isize; // cells ahead (positive = in front)
        for wc in 0..window {
            let r = wc as isize - v; // cells to the right
            let cell_r = state.agent_pos.0 as isize + f * fwd.0 + r * right.0;
            let cell_c = state.agent_pos.1 as isize + f * fwd.1 + r * right.1;
            let color = cell_color(state, cell_r, cell_c);
            fill_cell(&mut data, r_size, cp, wr, wc, color);
        }
    }

    // agent chevron, always pointing up in the egocentric frame
    draw_chevron(&mut data, r_size, cp, spec.view_radius, spec.view_radius);

    Tensor::from_vec(&[3, r_size, r_size], data).expect("render buffer sized correctly")
}

fn cell_color(state: &EnvState, r: isize, c: isize) -> [f64; 3] {
    if state.maze.is_wall(r, c) {
        return COLOR_WALL;
    }
    let pos = (r as usize, c as usize);
    for &(p, item) in &state.items {
        if p == pos {
            return item.color();
        }
    }
    COLOR_FLOOR
}

fn fill_cell(data: &mut [f64], r_size: usize, cp: usize, wr: usize, wc: usize, color: [f64; 3]) {
    let plane = r_size * r_size;
    for (ch, &col) in color.iter().enumerate() {
        for pr in 0..cp {
            let row = wr * cp + pr;
            let base = ch * plane + row * r_size + wc * cp;
            data[base..base + cp].iter_mut().for_each(|p| *p = col);
        }
    }
}

fn draw_chevron(data: &mut [f64], r_size: usize, cp: usize, wr: usize, wc: usize) {
    let plane = r_size * r_size;
    let mid = (cp as isize - 1) / 2;
    for pr in 0..cp {
        for pc in 0..cp {
            // upward-pointing triangle
            if (pc as isize - mid).abs() * 2 <= pr as isize {
                let row = wr * cp + pr;
                let idx = row * r_size + wc * cp + pc;
                for (ch, &col) in COLOR_AGENT.iter().enumerate() {
                    data[ch * plane + idx] = col;
                }
            }
        }
    }
}

/// Debug frame dump as binary PPM (P6), 8 bits per channel.
pub fn write_ppm(pixels: &Tensor, path: &std::path::Path) -> Result<()> {
    let shape = pixels.shape();
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let mut out = Vec::with_capacity(plane * 3 + 32);
    out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    for i in 0..plane {
        for ch in 0..3 {
            out.push((pixels.data()[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
