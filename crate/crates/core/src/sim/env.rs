use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{PowerModel, SimConfig};
use super::job::{Job, Lifecycle};
use super::power::PowerTrace;
use super::workload::Workload;
use super::SimError;

/// One scheduling decision. Encoded densely as `0..n` for jobs, `n` for suspend, `n + 1` for no-op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Schedule(usize),
    Suspend,
    NoOp,
}

impl Action {
    pub fn encode(self, ready_pool_size: usize) -> usize {
        match self {
            Action::Schedule(i) => i,
            Action::Suspend => ready_pool_size,
            Action::NoOp => ready_pool_size + 1,
        }
    }

    pub fn decode(index: usize, ready_pool_size: usize) -> Result<Self, SimError> {
        match index {
            i if i < ready_pool_size => Ok(Action::Schedule(i)),
            i if i == ready_pool_size => Ok(Action::Suspend),
            i if i == ready_pool_size + 1 => Ok(Action::NoOp),
            _ => Err(SimError::ActionOutOfRange(index, ready_pool_size + 2)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// The requested action could not be carried out and was treated as a no-op.
    pub invalid_action: bool,
    pub completed_jobs: usize,
    /// Sum of values of jobs that finished this step (the positive reward part).
    pub completed_value: f64,
    pub violating_jobs: usize,
    /// `qos_penalty_coeff * value` summed over jobs past their violation time.
    pub penalty: f64,
    pub expired_jobs: usize,
    /// Running jobs pushed back to the ready pool by a power contraction.
    pub power_suspensions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Running totals over an episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub arrived_jobs: usize,
    pub finished_jobs: usize,
    pub finished_value: f64,
    pub expired_jobs: usize,
    pub expired_value: f64,
    pub finished_ids: Vec<u64>,
}

/// Full simulator state: pools, running set, power trace, clock and random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DatacenterState {
    config: Arc<SimConfig>,
    power: Arc<PowerTrace>,
    workload: Workload,
    rng: ChaCha8Rng,
    clock: u64,
    next_id: u64,
    wait_pool: VecDeque<Job>,
    ready_pool: Vec<Job>,
    running: Vec<Job>,
    ledger: Ledger,
    done: bool,
}

impl DatacenterState {
    pub fn reset(config: &SimConfig, seed: u64) -> Result<Self, SimError> {
        Self::reset_shared(Arc::new(config.clone()), seed)
    }

    /// Like [`reset`](Self::reset) but reuses an already shared config.
    pub fn reset_shared(config: Arc<SimConfig>, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let mut power_rng = ChaCha8Rng::seed_from_u64(seed);
        power_rng.set_stream(1);
        let power = match &config.power {
            PowerModel::Synthetic {
                day_len,
                base,
                amplitude,
                noise_std,
                min_fraction,
            } => Arc::new(PowerTrace::synthetic(
                &mut power_rng,
                config.episode_len + config.horizon,
                config.r_max,
                *day_len,
                *base,
                *amplitude,
                *noise_std,
                *min_fraction,
            )),
            PowerModel::File { trace: Some(t), .. } => t.clone(),
            PowerModel::File { path, trace: None } => {
                let t = PowerTrace::from_csv_path(path)?;
                t.check_bounds(config.r_max)?;
                Arc::new(t)
            }
        };
        let workload = Workload::calibrated(&config, power.mean_over(config.episode_len));
        let mut state = Self {
            config,
            power,
            workload,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: 0,
            next_id: 0,
            wait_pool: VecDeque::new(),
            ready_pool: Vec::new(),
            running: Vec::new(),
            ledger: Ledger::default(),
            done: false,
        };
        state.draw_arrivals();
        state.admit();
        Ok(state)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn shared_config(&self) -> &Arc<SimConfig> {
        &self.config
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn n_actions(&self) -> usize {
        self.config.n_actions()
    }

    pub fn power(&self) -> &PowerTrace {
        &self.power
    }

    pub fn arrival_rate(&self) -> f64 {
        self.workload.rate
    }

    pub fn ready_pool(&self) -> &[Job] {
        &self.ready_pool
    }

    pub fn wait_pool(&self) -> &VecDeque<Job> {
        &self.wait_pool
    }

    pub fn running(&self) -> &[Job] {
        &self.running
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Every job still in the system.
    pub fn live_jobs(&self) -> impl Iterator<Item = &Job> {
        self.wait_pool.iter().chain(&self.ready_pool).chain(&self.running)
    }

    /// Powered resource units for image row `row` (timestep `clock + row`).
    pub fn available_at(&self, row: usize) -> u32 {
        self.power.at(self.clock + row as u64)
    }

    /// Resource units committed to running jobs in image row `row`.
    pub fn occupancy_at(&self, row: usize) -> u32 {
        self.running
            .iter()
            .filter(|j| j.remaining_work as usize > row)
            .map(|j| j.resource_req)
            .sum()
    }

    /// Free units at the current timestep.
    pub fn free_capacity(&self) -> u32 {
        self.available_at(0).saturating_sub(self.occupancy_at(0))
    }

    /// Whether `job` can start now: its demand fits in every visible row it would occupy.
    pub fn can_place(&self, job: &Job) -> bool {
        let span = (job.remaining_work as usize).min(self.config.horizon);
        (0..span).all(|row| self.occupancy_at(row) + job.resource_req <= self.available_at(row))
    }

    pub fn can_schedule(&self, slot: usize) -> bool {
        self.ready_pool.get(slot).is_some_and(|j| self.can_place(j))
    }

    /// Resource image, row-major `horizon x r_max`: free = 0, powered off = -1, occupied =
    /// occupant value through [`SimConfig::normalized_value`].
    pub fn resource_image(&self) -> Vec<f64> {
        let (rows, cols) = (self.config.horizon, self.config.r_max);
        let mut image = vec![0.0; rows * cols];
        for row in 0..rows {
            let cells = &mut image[row * cols..(row + 1) * cols];
            let mut col = 0usize;
            for job in self.running.iter().filter(|j| j.remaining_work as usize > row) {
                let v = self.config.normalized_value(job.value);
                for _ in 0..job.resource_req {
                    if col < cols {
                        cells[col] = v;
                    }
                    col += 1;
                }
            }
            let available = self.available_at(row) as usize;
            for cell in cells.iter_mut().skip(col.max(available)) {
                *cell = -1.0;
            }
        }
        image
    }

    /// Adds a job to the wait pool and admits it if a ready slot is free.
    pub fn submit(&mut self, mut job: Job) {
        job.lifecycle = Lifecycle::Waiting;
        self.next_id = self.next_id.max(job.id + 1);
        self.ledger.arrived_jobs += 1;
        self.wait_pool.push_back(job);
        self.admit();
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, SimError> {
        if self.done {
            return Err(SimError::EpisodeOver);
        }
        let mut info = StepInfo {
            invalid_action: !self.apply(action),
            ..StepInfo::default()
        };
        let t = self.clock;

        for job in &mut self.running {
            job.remaining_work -= 1;
        }
        let (finished, still_running): (Vec<Job>, Vec<Job>) =
            self.running.drain(..).partition(|j| j.remaining_work == 0);
        self.running = still_running;
        for mut job in finished {
            job.transition(Lifecycle::Finished);
            info.completed_jobs += 1;
            info.completed_value += job.value;
            self.ledger.finished_jobs += 1;
            self.ledger.finished_value += job.value;
            self.ledger.finished_ids.push(job.id);
        }

        let coeff = self.config.qos_penalty_coeff;
        for job in self.live_jobs() {
            if t >= job.qos_violation_time {
                info.violating_jobs += 1;
                info.penalty += coeff * job.value;
            }
        }
        info.expired_jobs = self.expire(t);

        self.clock = t + 1;
        self.draw_arrivals();
        info.power_suspensions = self.enforce_power();
        self.admit();
        self.done = self.clock >= self.config.episode_len as u64;

        Ok(StepResult {
            reward: info.completed_value - info.penalty,
            done: self.done,
            info,
        })
    }

    fn apply(&mut self, action: Action) -> bool {
        match action {
            Action::NoOp => true,
            Action::Schedule(slot) => {
                if !self.can_schedule(slot) {
                    return false;
                }
                let mut job = self.ready_pool.remove(slot);
                job.transition(Lifecycle::Running);
                self.running.push(job);
                true
            }
            Action::Suspend => self.suspend_and_replace(),
        }
    }

    /// Preempts the lowest-value running job in favour of the most valuable ready job that is
    /// strictly more valuable and fits once the victim's resources are released. The victim
    /// takes over the replacement's ready-pool slot.
    fn suspend_and_replace(&mut self) -> bool {
        let Some(victim_idx) = self
            .running
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.value.total_cmp(&b.value))
            .map(|(i, _)| i)
        else {
            return false;
        };
        let mut victim = self.running.remove(victim_idx);
        let mut best: Option<usize> = None;
        for (i, job) in self.ready_pool.iter().enumerate() {
            let better = best.is_none_or(|b| job.value > self.ready_pool[b].value);
            if job.value > victim.value && better && self.can_place(job) {
                best = Some(i);
            }
        }
        let Some(slot) = best else {
            self.running.insert(victim_idx, victim);
            return false;
        };
        victim.transition(Lifecycle::Suspended);
        let mut replacement = std::mem::replace(&mut self.ready_pool[slot], victim);
        replacement.transition(Lifecycle::Running);
        self.running.push(replacement);
        true
    }

    fn expire(&mut self, t: u64) -> usize {
        let due = |j: &Job| t >= 2 * j.qos_violation_time;
        let mut expired = Vec::new();
        for pool in [&mut self.ready_pool, &mut self.running] {
            let (gone, keep): (Vec<Job>, Vec<Job>) = pool.drain(..).partition(|j| due(j));
            *pool = keep;
            expired.extend(gone);
        }
        let (gone, keep): (Vec<Job>, Vec<Job>) = self.wait_pool.drain(..).partition(|j| due(j));
        self.wait_pool = keep.into();
        expired.extend(gone);
        for mut job in expired.iter().cloned() {
            job.transition(Lifecycle::Expired);
            self.ledger.expired_jobs += 1;
            self.ledger.expired_value += job.value;
        }
        expired.len()
    }

    fn draw_arrivals(&mut self) {
        let arrivals = self
            .workload
            .generate_arrivals(&mut self.rng, &self.config, self.clock, &mut self.next_id);
        self.ledger.arrived_jobs += arrivals.len();
        self.wait_pool.extend(arrivals);
    }

    /// Suspends lowest-value running jobs until every visible row fits its power budget.
    fn enforce_power(&mut self) -> usize {
        let mut suspended = 0;
        while let Some(row) =
            (0..self.config.horizon).find(|&r| self.occupancy_at(r) > self.available_at(r))
        {
            let victim_idx = self
                .running
                .iter()
                .enumerate()
                .filter(|(_, j)| j.remaining_work as usize > row)
                .min_by(|(_, a), (_, b)| a.value.total_cmp(&b.value))
                .map(|(i, _)| i)
                .expect("an overfull row has occupants");
            let mut job = self.running.remove(victim_idx);
            job.transition(Lifecycle::Suspended);
            if self.ready_pool.len() < self.config.ready_pool_size {
                self.ready_pool.push(job);
            } else {
                self.wait_pool.push_front(job);
            }
            suspended += 1;
        }
        suspended
    }

    fn admit(&mut self) {
        while self.ready_pool.len() < self.config.ready_pool_size {
            let Some(mut job) = self.wait_pool.pop_front() else { break };
            if job.lifecycle == Lifecycle::Waiting {
                job.transition(Lifecycle::Ready);
            }
            self.ready_pool.push(job);
        }
    }
}
