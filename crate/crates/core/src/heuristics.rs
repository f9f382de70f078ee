//! Baseline schedulers: shortest job first, first come first serve, highest QoS and highest
//! value first. Each is a pure function of the state and never suspends.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sim::{Action, DatacenterState, Job};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeuristicKind {
    Sjf,
    Fcfs,
    Qos,
    Hvf,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 4] = [HeuristicKind::Sjf, HeuristicKind::Fcfs, HeuristicKind::Qos, HeuristicKind::Hvf];

    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::Sjf => "sjf",
            HeuristicKind::Fcfs => "fcfs",
            HeuristicKind::Qos => "qos",
            HeuristicKind::Hvf => "hvf",
        }
    }

    /// `true` when `candidate` should be preferred over `incumbent`. Strict, so the lower
    /// ready-pool index wins ties.
    fn prefers(self, candidate: &Job, incumbent: &Job) -> bool {
        match self {
            HeuristicKind::Sjf => candidate.remaining_work < incumbent.remaining_work,
            HeuristicKind::Fcfs => candidate.arrival_time < incumbent.arrival_time,
            HeuristicKind::Qos => candidate.qos > incumbent.qos,
            HeuristicKind::Hvf => candidate.value > incumbent.value,
        }
    }

    pub fn select_action(self, state: &DatacenterState) -> Action {
        let mut best: Option<(usize, &Job)> = None;
        for (slot, job) in state.ready_pool().iter().enumerate() {
            if !state.can_place(job) {
                continue;
            }
            if best.is_none_or(|(_, b)| self.prefers(job, b)) {
                best = Some((slot, job));
            }
        }
        best.map_or(Action::NoOp, |(slot, _)| Action::Schedule(slot))
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sjf" => Ok(HeuristicKind::Sjf),
            "fcfs" => Ok(HeuristicKind::Fcfs),
            "qos" => Ok(HeuristicKind::Qos),
            "hvf" => Ok(HeuristicKind::Hvf),
            other => Err(format!("unknown heuristic {other:?} (expected sjf|fcfs|qos|hvf)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{PowerModel, PowerTrace, SimConfig, TraceSource};
    use std::sync::Arc;

    fn state_with(capacity: u32, jobs: &[(f64, f64, u32, u32, u64)]) -> DatacenterState {
        let cfg = SimConfig {
            r_max: 10,
            lambda_load: 0.0,
            power: PowerModel::File {
                path: "c.csv".into(),
                trace: Some(Arc::new(PowerTrace::new(vec![capacity], TraceSource::File).unwrap())),
            },
            ..SimConfig::default()
        };
        let mut s = DatacenterState::reset(&cfg, 0).unwrap();
        for (id, &(value, qos, req, dur, arrival)) in jobs.iter().enumerate() {
            s.submit(Job::new(id as u64, value, qos, req, dur, arrival).unwrap());
        }
        s
    }

    #[test]
    fn sjf_picks_shortest() {
        let s = state_with(10, &[(1.0, 1.0, 1, 5, 0), (1.0, 1.0, 1, 2, 0), (1.0, 1.0, 1, 9, 0)]);
        assert_eq!(HeuristicKind::Sjf.select_action(&s), Action::Schedule(1));
    }

    #[test]
    fn qos_picks_highest_qos() {
        let s = state_with(10, &[(1.0, 0.5, 1, 3, 0), (1.0, 1.0, 1, 3, 0), (1.0, 0.75, 1, 3, 0)]);
        assert_eq!(HeuristicKind::Qos.select_action(&s), Action::Schedule(1));
    }

    #[test]
    fn fcfs_and_hvf_keys() {
        let s = state_with(10, &[(2.0, 1.0, 1, 3, 5), (9.0, 1.0, 1, 3, 2), (4.0, 1.0, 1, 3, 3)]);
        assert_eq!(HeuristicKind::Fcfs.select_action(&s), Action::Schedule(1));
        assert_eq!(HeuristicKind::Hvf.select_action(&s), Action::Schedule(1));
    }

    #[test]
    fn nothing_fits_means_noop() {
        let s = state_with(1, &[(5.0, 1.0, 2, 3, 0), (6.0, 0.5, 3, 1, 0)]);
        for h in HeuristicKind::ALL {
            assert_eq!(h.select_action(&s), Action::NoOp);
        }
    }

    #[test]
    fn infeasible_best_is_skipped() {
        let s = state_with(2, &[(50.0, 1.0, 3, 1, 0), (5.0, 0.5, 1, 3, 0)]);
        assert_eq!(HeuristicKind::Hvf.select_action(&s), Action::Schedule(1));
        assert_eq!(HeuristicKind::Qos.select_action(&s), Action::Schedule(1));
    }

    #[test]
    fn ties_go_to_lowest_index_under_every_permutation() {
        // three equal-key jobs plus one worse job, in every order
        let worse = (1.0, 0.25, 1, 9, 7);
        let equal = (5.0, 1.0, 1, 2, 1);
        for worse_pos in 0..4 {
            let mut jobs = vec![equal; 3];
            jobs.insert(worse_pos, worse);
            let s = state_with(10, &jobs);
            let first_equal = if worse_pos == 0 { 1 } else { 0 };
            for h in HeuristicKind::ALL {
                assert_eq!(h.select_action(&s), Action::Schedule(first_equal), "{h} worse@{worse_pos}");
            }
        }
    }

    #[test]
    fn parses_cli_names() {
        for h in HeuristicKind::ALL {
            assert_eq!(h.name().parse::<HeuristicKind>().unwrap(), h);
        }
        assert_eq!("QoS".parse::<HeuristicKind>().unwrap(), HeuristicKind::Qos);
        assert!("edf".parse::<HeuristicKind>().is_err());
    }
}
