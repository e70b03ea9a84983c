use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub type RunId = u64;

/// The nine workflow steps, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Push event accepted and queued.
    Push = 1,
    /// Snapshot copied into the run's isolated working directory.
    Pull = 2,
    Test = 3,
    Build = 4,
    Store = 5,
    /// Artifact fetched back from the store and verified for rollout.
    Deploy = 6,
    /// Instances started and registered with the fabric (not yet ready).
    Provision = 7,
    Readiness = 8,
    Address = 9,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Push,
        Stage::Pull,
        Stage::Test,
        Stage::Build,
        Stage::Store,
        Stage::Deploy,
        Stage::Provision,
        Stage::Readiness,
        Stage::Address,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Stage> {
        Stage::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Push => "push",
            Stage::Pull => "pull",
            Stage::Test => "test",
            Stage::Build => "build",
            Stage::Store => "store",
            Stage::Deploy => "deploy",
            Stage::Provision => "provision",
            Stage::Readiness => "readiness",
            Stage::Address => "address",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Ok,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineEvent {
    pub run_id: RunId,
    pub stage: Stage,
    pub outcome: Outcome,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub detail: String,
}

impl fmt::Display for PipelineEvent {
    /// `run_id stage outcome timestamp detail`, with newlines in the detail
    /// flattened so one event is always one line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let outcome = match self.outcome {
            Outcome::Ok => "ok",
            Outcome::Fail => "fail",
        };
        let detail = self.detail.replace(['\n', '\r'], " ");
        write!(
            f,
            "{} {} {} {} {}",
            self.run_id,
            self.stage.number(),
            outcome,
            self.timestamp,
            detail.trim_end()
        )
    }
}

impl FromStr for PipelineEvent {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut parts = line.splitn(5, ' ');
        let mut field = |name: &str| {
            parts
                .next()
                .ok_or_else(|| format!("missing {name} in {line:?}"))
        };
        let run_id = field("run_id")?
            .parse()
            .map_err(|e| format!("run_id: {e}"))?;
        let stage_n: u8 = field("stage")?.parse().map_err(|e| format!("stage: {e}"))?;
        let stage =
            Stage::from_number(stage_n).ok_or_else(|| format!("stage {stage_n} out of range"))?;
        let outcome = match field("outcome")? {
            "ok" => Outcome::Ok,
            "fail" => Outcome::Fail,
            other => return Err(format!("bad outcome {other:?}")),
        };
        let timestamp = field("timestamp")?
            .parse()
            .map_err(|e| format!("timestamp: {e}"))?;
        let detail = parts.next().unwrap_or("").to_string();
        Ok(PipelineEvent {
            run_id,
            stage,
            outcome,
            timestamp,
            detail,
        })
    }
}

/// Checks the per-run ordering rule: stages strictly increase and nothing
/// follows a failure.
pub fn well_ordered(events: &[PipelineEvent]) -> bool {
    events
        .windows(2)
        .all(|w| w[0].outcome == Outcome::Ok && w[0].stage < w[1].stage)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_roundtrip() {
        let e = PipelineEvent {
            run_id: 12,
            stage: Stage::Test,
            outcome: Outcome::Fail,
            timestamp: 1_700_000_000_123,
            detail: "exit code 1: assertion failed".into(),
        };
        let line = e.to_string();
        assert_eq!(
            line,
            "12 3 fail 1700000000123 exit code 1: assertion failed"
        );
        assert_eq!(line.parse::<PipelineEvent>().unwrap(), e);
    }

    #[test]
    fn detail_newlines_flattened() {
        let e = PipelineEvent {
            run_id: 1,
            stage: Stage::Build,
            outcome: Outcome::Ok,
            timestamp: 0,
            detail: "a\nb\n".into(),
        };
        assert_eq!(e.to_string(), "1 4 ok 0 a b");
    }

    #[test]
    fn stage_numbers() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            assert_eq!(s.number() as usize, i + 1);
            assert_eq!(Stage::from_number(s.number()), Some(*s));
        }
        assert_eq!(Stage::from_number(0), None);
        assert_eq!(Stage::from_number(10), None);
    }
}
