//! Row-per-step episode traces.
//!
//! Columns: `k, leader_index, prober_x, prober_y, action_ix, action_iy,
//! action_vx, action_vy, r_total, r_mli, r_ld, r_as, mask, terminated,
//! truncated, x_0, y_0, ..., x_{N-1}, y_{N-1}`. The first row is the reset
//! state (`k = 0`) with empty action and reward fields.

use std::io::{Read, Write};

use crate::dynamics::SwarmState;
use crate::env::{decode_action, ActionId, StepResult};
use crate::error::{CoreError, Result};
use crate::geom::Vec2;
use crate::reward::RewardBreakdown;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub leader_index: usize,
    pub prober: Vec2,
    pub positions: Vec<Vec2>,
    pub action: Option<ActionId>,
    pub reward: Option<RewardBreakdown>,
    pub terminated: bool,
    pub truncated: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn new(initial: &SwarmState) -> Self {
        Self {
            rows: vec![TraceRow {
                k: 0,
                leader_index: initial.leader_index,
                prober: initial.prober_position,
                positions: initial.positions.clone(),
                action: None,
                reward: None,
                terminated: false,
                truncated: false,
            }],
        }
    }

    /// Record the state reached by `action` and its step result.
    pub fn push(&mut self, state: &SwarmState, action: ActionId, result: &StepResult) {
        let k = self.rows.last().map_or(0, |r| r.k + 1);
        self.rows.push(TraceRow {
            k,
            leader_index: state.leader_index,
            prober: state.prober_position,
            positions: state.positions.clone(),
            action: Some(action),
            reward: Some(result.info.reward.clone()),
            terminated: result.terminated,
            truncated: result.truncated,
        });
    }

    pub fn actions(&self) -> Vec<ActionId> {
        self.rows.iter().filter_map(|r| r.action).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.reward.as_ref().map(|b| b.r_total))
            .collect()
    }

    fn n_agents(&self) -> usize {
        self.rows.first().map_or(0, |r| r.positions.len())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "k",
            "leader_index",
            "prober_x",
            "prober_y",
            "action_ix",
            "action_iy",
            "action_vx",
            "action_vy",
            "r_total",
            "r_mli",
            "r_ld",
            "r_as",
            "mask",
            "terminated",
            "truncated",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for i in 0..self.n_agents() {
            header.push(format!("x_{i}"));
            header.push(format!("y_{i}"));
        }
        w.write_record(&header)?;

        for row in &self.rows {
            let mut rec: Vec<String> = vec![
                row.k.to_string(),
                row.leader_index.to_string(),
                row.prober.x.to_string(),
                row.prober.y.to_string(),
            ];
            match row.action {
                Some(a) => {
                    let v = decode_action(a)?;
                    rec.extend([
                        a.x.to_string(),
                        a.y.to_string(),
                        v.x.to_string(),
                        v.y.to_string(),
                    ]);
                }
                None => rec.extend(std::iter::repeat(String::new()).take(4)),
            }
            match &row.reward {
                Some(b) => {
                    rec.extend([b.r_total, b.r_mli, b.r_ld, b.r_as, b.mask].map(|v| v.to_string()))
                }
                None => rec.extend(std::iter::repeat(String::new()).take(5)),
            }
            rec.push(u8::from(row.terminated).to_string());
            rec.push(u8::from(row.truncated).to_string());
            for p in &row.positions {
                rec.push(p.x.to_string());
                rec.push(p.y.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse a trace written by [`EpisodeTrace::write_csv`]. Reward breakdowns
    /// come back without the mixture vector.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let n_cols = r.headers()?.len();
        if n_cols < 15 || (n_cols - 15) % 2 != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "trace has unexpected column count {n_cols}"
            )));
        }
        let bad = |what: &str| CoreError::InvalidConfig(format!("bad trace field {what}"));
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad(s));
        let u = |s: &str| s.parse::<usize>().map_err(|_| bad(s));
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let action = if rec[4].is_empty() {
                None
            } else {
                Some(ActionId::new(u(&rec[4])?, u(&rec[5])?))
            };
            let reward = if rec[8].is_empty() {
                None
            } else {
                Some(RewardBreakdown {
                    r_total: f(&rec[8])?,
                    r_mli: f(&rec[9])?,
                    r_ld: f(&rec[10])?,
                    r_as: f(&rec[11])?,
                    mask: f(&rec[12])?,
                    mixture: Vec::new(),
                })
            };
            let positions = (15..n_cols)
                .step_by(2)
                .map(|c| Ok(Vec2::new(f(&rec[c])?, f(&rec[c + 1])?)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(TraceRow {
                k: u(&rec[0])?,
                leader_index: u(&rec[1])?,
                prober: Vec2::new(f(&rec[2])?, f(&rec[3])?),
                positions,
                action,
                reward,
                terminated: &rec[13] == "1",
                truncated: &rec[14] == "1",
            });
        }
        Ok(Self { rows })
    }
}
