// SPDX-License-Identifier: Apache-2.0

//! Population curves, trap detection and the converged-loss oracle.
//!
//! "Right" and "left" always refer to arms 1 and 0. An agent's choice is
//! its strict greedy preference between them unless [`ChoiceRule::LastAction`]
//! is selected.

use serde::{Deserialize, Serialize};

use crate::agent::{Preference, QTable};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::rng::{sample_normal, RngStream};

/// One logged environment step. `q` is the table after the update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub agent_id: u32,
    pub action: usize,
    pub raw_reward: f64,
    pub emitted_reward: f64,
    /// ε used to select `action`.
    pub epsilon: f64,
    pub delta: f64,
    pub interest: Option<f64>,
    pub i_med: Option<f64>,
    pub q: QTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrapEvent {
    pub agent_id: u32,
    pub entry_step: u64,
    pub exit_step: Option<u64>,
}

/// How an agent is assigned to the right or left group at a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceRule {
    /// Strict comparison of `q[1]` and `q[0]`; ties belong to neither group.
    #[default]
    Greedy,
    /// The arm pulled at that step.
    LastAction,
}

impl ChoiceRule {
    pub fn classify(self, record: &StepRecord) -> Preference {
        match self {
            ChoiceRule::Greedy => record.q.preference(),
            ChoiceRule::LastAction => match record.action {
                0 => Preference::Left,
                1 => Preference::Right,
                _ => Preference::Tie,
            },
        }
    }
}

/// Per-step population aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFrame {
    pub step: u64,
    pub right_fraction: f64,
    pub mean_loss_right: Option<f64>,
    pub mean_loss_left: Option<f64>,
    pub n_right: usize,
    pub n_left: usize,
    pub n_tie: usize,
}

fn preference_score(p: Preference) -> f64 {
    match p {
        Preference::Right => 1.0,
        Preference::Left => 0.0,
        Preference::Tie => 0.5,
    }
}

/// Mean over agents of 1 (prefers right), 0 (prefers left) or 0.5 (tie).
pub fn right_fraction<'a, I>(tables: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a QTable>,
{
    let (sum, n) = tables
        .into_iter()
        .fold((0.0, 0usize), |(s, n), q| (s + preference_score(q.preference()), n + 1));
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossByChoice {
    pub right: Option<f64>,
    pub left: Option<f64>,
    pub n_right: usize,
    pub n_left: usize,
    pub n_tie: usize,
}

/// Mean squared TD error of each group among records from one step.
pub fn mean_loss_by_choice<'a, I>(records: I, rule: ChoiceRule) -> LossByChoice
where
    I: IntoIterator<Item = &'a StepRecord>,
{
    let (mut sr, mut sl) = (0.0, 0.0);
    let mut out = LossByChoice::default();
    for r in records {
        let d2 = r.delta * r.delta;
        match rule.classify(r) {
            Preference::Right => {
                sr += d2;
                out.n_right += 1;
            }
            Preference::Left => {
                sl += d2;
                out.n_left += 1;
            }
            Preference::Tie => out.n_tie += 1,
        }
    }
    out.right = (out.n_right > 0).then(|| sr / out.n_right as f64);
    out.left = (out.n_left > 0).then(|| sl / out.n_left as f64);
    out
}

/// Trailing moving average over the last `window` present values.
pub fn moving_average(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let present: Vec<f64> = values[lo..=i].iter().flatten().copied().collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        })
        .collect()
}

/// Builds one frame per step from traces that share the same recorded
/// steps. `traces[i]` holds agent `i`'s records in step order. The success
/// fraction always uses greedy preference; `rule` only groups the losses.
pub fn aggregate(traces: &[&[StepRecord]], rule: ChoiceRule) -> Vec<MetricsFrame> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|k| {
            let at_step: Vec<&StepRecord> = traces.iter().map(|t| &t[k]).collect();
            let loss = mean_loss_by_choice(at_step.iter().copied(), rule);
            MetricsFrame {
                step: at_step[0].step,
                right_fraction: right_fraction(at_step.iter().map(|r| &r.q)).unwrap_or(0.0),
                mean_loss_right: loss.right,
                mean_loss_left: loss.left,
                n_right: loss.n_right,
                n_left: loss.n_left,
                n_tie: loss.n_tie,
            }
        })
        .collect()
}

/// Online trap-regime tracker.
///
/// Entry is the first step with `q[0] > q[1]`, exit the next step with
/// `q[1] > q[0]`; equality keeps the current regime.
#[derive(Debug, Clone)]
pub struct TrapDetector {
    agent_id: u32,
    trapped: bool,
    open_entry: Option<u64>,
    started: bool,
    events: Vec<TrapEvent>,
}

impl TrapDetector {
    pub fn new(agent_id: u32) -> Self {
        Self {
            agent_id,
            trapped: false,
            open_entry: None,
            started: false,
            events: Vec::new(),
        }
    }

    pub fn observe(&mut self, step: u64, q: &QTable) {
        let pref = q.preference();
        if !self.started {
            self.started = true;
            if pref == Preference::Left {
                self.trapped = true;
                self.open_entry = Some(step);
            }
            return;
        }
        match (self.trapped, pref) {
            (false, Preference::Left) => {
                self.trapped = true;
                self.open_entry = Some(step);
            }
            (true, Preference::Right) => {
                self.trapped = false;
                if let Some(entry) = self.open_entry.take() {
                    self.events.push(TrapEvent {
                        agent_id: self.agent_id,
                        entry_step: entry,
                        exit_step: Some(step),
                    });
                }
            }
            _ => {}
        }
    }

    pub fn is_trapped(&self) -> bool {
        self.trapped
    }

    pub fn finish(mut self) -> Vec<TrapEvent> {
        if let Some(entry) = self.open_entry.take() {
            self.events.push(TrapEvent {
                agent_id: self.agent_id,
                entry_step: entry,
                exit_step: None,
            });
        }
        self.events
    }
}

/// Trap events of one agent's step-ordered trace.
pub fn detect_trap_events(agent_id: u32, trace: &[StepRecord]) -> Vec<TrapEvent> {
    let mut d = TrapDetector::new(agent_id);
    for r in trace {
        d.observe(r.step, &r.q);
    }
    d.finish()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapDurationStats {
    /// Median duration, unexited events counted up to `horizon`.
    pub median: Option<f64>,
    /// Share of events with no exit.
    pub never_exit_fraction: f64,
    pub n_events: usize,
}

/// Censored trap-duration summary. An unexited event lasts `horizon - entry`.
pub fn trap_duration_stats(events: &[TrapEvent], horizon: u64) -> TrapDurationStats {
    if events.is_empty() {
        return TrapDurationStats {
            median: None,
            never_exit_fraction: 0.0,
            n_events: 0,
        };
    }
    let mut durations: Vec<f64> = events
        .iter()
        .map(|e| (e.exit_step.unwrap_or(horizon.max(e.entry_step)) - e.entry_step) as f64)
        .collect();
    durations.sort_by(f64::total_cmp);
    let n = durations.len();
    let median = if n % 2 == 1 {
        durations[n / 2]
    } else {
        0.5 * (durations[n / 2 - 1] + durations[n / 2])
    };
    let never = events.iter().filter(|e| e.exit_step.is_none()).count();
    TrapDurationStats {
        median: Some(median),
        never_exit_fraction: never as f64 / n as f64,
        n_events: n,
    }
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Mean squared TD error of the policy "always pull `arm`" once its value
/// has converged to `mu_arm / (1 - gamma)`, over `n_samples` fresh rewards.
///
/// Each sample evaluates `v - (r + gamma * v)` straight from the arm
/// parameters; nothing here goes through [`crate::agent::Agent`]. When `arm`
/// holds the largest discounted mean this is also the agent's bootstrapped
/// TD error at the frozen table.
pub fn var_delta_oracle(
    env: &EnvSpec,
    arm: usize,
    gamma: f64,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<Estimate> {
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be >= 1"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::param("gamma", format!("must lie in [0, 1), got {gamma}")));
    }
    let params = env.arm(arm)?.params;
    let value = params.mu / (1.0 - gamma);
    let squares = (0..n_samples)
        .map(|_| {
            let r = sample_normal(rng, params)?;
            let d = value - (r + gamma * value);
            Ok(d * d)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&squares))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{broken_armed_bandit, fig3_bandit};
    use proptest::prelude::*;

    fn rec(step: u64, action: usize, delta: f64, q: [f64; 2]) -> StepRecord {
        StepRecord {
            step,
            agent_id: 0,
            action,
            raw_reward: 0.0,
            emitted_reward: 0.0,
            epsilon: 0.0,
            delta,
            interest: None,
            i_med: None,
            q: QTable(q.to_vec()),
        }
    }

    fn trace_from_diffs(diffs: &[f64]) -> Vec<StepRecord> {
        diffs
            .iter()
            .enumerate()
            .map(|(i, &d)| rec(i as u64, 0, 0.0, [d, 0.0]))
            .collect()
    }

    #[test]
    fn right_fraction_examples() {
        let all_right = vec![QTable(vec![0.0, 20.0]); 5];
        assert_eq!(right_fraction(&all_right).unwrap(), 1.0);
        let trapped = vec![QTable(vec![0.0, -0.3]); 5];
        assert_eq!(right_fraction(&trapped).unwrap(), 0.0);
        let mixed = [QTable(vec![0.0, 20.0]), QTable(vec![0.0, -1.0])];
        assert_eq!(right_fraction(&mixed).unwrap(), 0.5);
        let tie = [QTable(vec![1.0, 1.0])];
        assert_eq!(right_fraction(&tie).unwrap(), 0.5);
        assert!(matches!(right_fraction(&[]), Err(Error::EmptyPopulation)));
    }

    #[test]
    fn loss_groups() {
        let recs = [
            rec(1, 1, 2.0, [0.0, 20.0]),
            rec(1, 1, 4.0, [0.0, 20.0]),
            rec(1, 0, 1.0, [0.0, -1.0]),
            rec(1, 1, 9.0, [3.0, 3.0]),
        ];
        let g = mean_loss_by_choice(&recs, ChoiceRule::Greedy);
        assert_eq!(g.right, Some(10.0));
        assert_eq!(g.left, Some(1.0));
        assert_eq!((g.n_right, g.n_left, g.n_tie), (2, 1, 1));
        let a = mean_loss_by_choice(&recs, ChoiceRule::LastAction);
        assert_eq!(a.right, Some((4.0 + 16.0 + 81.0) / 3.0));
        assert_eq!(a.left, Some(1.0));
        let empty = mean_loss_by_choice(&recs[..1], ChoiceRule::Greedy);
        assert_eq!(empty.left, None);
    }

    #[test]
    fn smoothing() {
        let v = [Some(1.0), None, Some(3.0), Some(5.0)];
        assert_eq!(moving_average(&v, 2), vec![Some(1.0), Some(1.0), Some(3.0), Some(4.0)]);
        assert_eq!(moving_average(&[None, None], 3), vec![None, None]);
    }

    #[test]
    fn no_events_when_right_throughout() {
        let t = trace_from_diffs(&[-1.0, -2.0, -0.5]);
        assert!(detect_trap_events(0, &t).is_empty());
    }

    #[test]
    fn constructed_entry_and_exit() {
        let t = trace_from_diffs(&[-1.0, -1.0, 1.0, 1.0, -1.0]);
        let ev = detect_trap_events(3, &t);
        assert_eq!(
            ev,
            vec![TrapEvent {
                agent_id: 3,
                entry_step: 2,
                exit_step: Some(4)
            }]
        );
    }

    #[test]
    fn equality_keeps_regime() {
        let t = trace_from_diffs(&[-1.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
        let ev = detect_trap_events(0, &t);
        assert_eq!(
            ev,
            vec![
                TrapEvent {
                    agent_id: 0,
                    entry_step: 1,
                    exit_step: Some(5)
                },
                TrapEvent {
                    agent_id: 0,
                    entry_step: 7,
                    exit_step: None
                },
            ]
        );
    }

    #[test]
    fn starts_trapped() {
        let t = trace_from_diffs(&[1.0, 1.0]);
        assert_eq!(
            detect_trap_events(0, &t),
            vec![TrapEvent {
                agent_id: 0,
                entry_step: 0,
                exit_step: None
            }]
        );
    }

    #[test]
    fn duration_examples() {
        let s = trap_duration_stats(&[], 1000);
        assert_eq!((s.median, s.never_exit_fraction), (None, 0.0));

        let unexited = vec![
            TrapEvent {
                agent_id: 0,
                entry_step: 0,
                exit_step: None
            };
            4
        ];
        let s = trap_duration_stats(&unexited, 1000);
        assert_eq!((s.median, s.never_exit_fraction), (Some(1000.0), 1.0));

        let mixed = [
            TrapEvent {
                agent_id: 0,
                entry_step: 10,
                exit_step: Some(20),
            },
            TrapEvent {
                agent_id: 1,
                entry_step: 5,
                exit_step: Some(35),
            },
            TrapEvent {
                agent_id: 2,
                entry_step: 50,
                exit_step: None,
            },
        ];
        let s = trap_duration_stats(&mixed, 100);
        assert_eq!(s.median, Some(30.0));
        assert!((s.never_exit_fraction - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_examples() {
        let env = broken_armed_bandit();
        let mut rng = RngStream::new(1);
        let right = var_delta_oracle(&env, 1, 0.95, 100_000, &mut rng).unwrap();
        assert!((right.mean / 6.25 - 1.0).abs() <= 0.03, "{}", right.mean);
        let left = var_delta_oracle(&env, 0, 0.95, 1_000, &mut rng).unwrap();
        assert_eq!(left.mean, 0.0);
    }

    #[test]
    fn oracle_fig3_right_arm() {
        let env = fig3_bandit();
        let est = var_delta_oracle(&env, 1, 0.9, 100_000, &mut RngStream::new(2)).unwrap();
        assert!((est.mean / 49.0 - 1.0).abs() <= 0.03, "{}", est.mean);
    }

    #[test]
    fn oracle_rejects_bad_input() {
        let env = broken_armed_bandit();
        let mut rng = RngStream::new(0);
        assert!(var_delta_oracle(&env, 1, 0.9, 0, &mut rng).is_err());
        assert!(var_delta_oracle(&env, 5, 0.9, 10, &mut rng).is_err());
        assert!(var_delta_oracle(&env, 1, 1.0, 10, &mut rng).is_err());
    }

    fn brute_events(diffs: &[f64]) -> Vec<(u64, Option<u64>)> {
        // sign scan: +1 when q_l - q_r > 0, -1 when < 0, regime persists on 0
        let mut out = Vec::new();
        let mut trapped = diffs.first().is_some_and(|&d| d > 0.0);
        let mut entry = if trapped { Some(0u64) } else { None };
        for (i, &d) in diffs.iter().enumerate().skip(1) {
            if !trapped && d > 0.0 {
                trapped = true;
                entry = Some(i as u64);
            } else if trapped && d < 0.0 {
                trapped = false;
                out.push((entry.take().unwrap(), Some(i as u64)));
            }
        }
        if let Some(e) = entry {
            out.push((e, None));
        }
        out
    }

    proptest! {
        #[test]
        fn detector_matches_sign_scan(diffs in prop::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], 0..80)) {
            let t = trace_from_diffs(&diffs);
            let ev: Vec<(u64, Option<u64>)> = detect_trap_events(0, &t).iter().map(|e| (e.entry_step, e.exit_step)).collect();
            prop_assert_eq!(&ev, &brute_events(&diffs));
            for w in ev.windows(2) {
                prop_assert!(w[0].1.unwrap() <= w[1].0);
            }
            for (entry, exit) in &ev {
                if let Some(x) = exit { prop_assert!(x > entry); }
            }
        }

        #[test]
        fn durations_monotone_in_horizon(entries in prop::collection::vec((0u64..500, prop::option::of(1u64..300)), 1..30), t in 500u64..2000, extra in 0u64..1000) {
            let events: Vec<TrapEvent> = entries.iter().map(|&(e, len)| TrapEvent { agent_id: 0, entry_step: e, exit_step: len.map(|l| e + l) }).collect();
            let a = trap_duration_stats(&events, t).median.unwrap();
            let b = trap_duration_stats(&events, t + extra).median.unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn right_fraction_bounds(qs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50)) {
            let tables: Vec<QTable> = qs.iter().map(|&(l, r)| QTable(vec![l, r])).collect();
            let f = right_fraction(&tables).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(f == 1.0, qs.iter().all(|&(l, r)| r > l));
        }
    }
}
