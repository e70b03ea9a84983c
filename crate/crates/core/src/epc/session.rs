use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gtp::TunnelEndpointId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Detached,
    Attaching,
    Attached,
    Detaching,
}

impl SessionState {
    pub const ALL: [SessionState; 4] = [
        SessionState::Detached,
        SessionState::Attaching,
        SessionState::Attached,
        SessionState::Detaching,
    ];

    /// The lifecycle is a single cycle:
    /// DETACHED → ATTACHING → ATTACHED → DETACHING → DETACHED.
    pub fn can_transition_to(self, next: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, next),
            (Detached, Attaching)
                | (Attaching, Attached)
                | (Attached, Detaching)
                | (Detaching, Detached)
        )
    }

    pub fn has_bearer(self) -> bool {
        matches!(self, SessionState::Attached | SessionState::Detaching)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Detached => "DETACHED",
            SessionState::Attaching => "ATTACHING",
            SessionState::Attached => "ATTACHED",
            SessionState::Detaching => "DETACHING",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SessionState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SessionState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown session state {s:?}"))
    }
}

/// User-plane resources bound to an attached UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bearer {
    pub ue_ip: Ipv4Addr,
    pub uplink_teid: TunnelEndpointId,
    pub downlink_teid: TunnelEndpointId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub subscriber_id: String,
    pub state: SessionState,
    /// Populated iff `state` is ATTACHED or DETACHING.
    pub bearer: Option<Bearer>,
    /// Milliseconds since the Unix epoch.
    pub attached_at: Option<u64>,
}

impl Session {
    pub fn ue_ip(&self) -> Option<Ipv4Addr> {
        self.bearer.map(|b| b.ue_ip)
    }

    pub fn uplink_teid(&self) -> Option<TunnelEndpointId> {
        self.bearer.map(|b| b.uplink_teid)
    }

    pub fn downlink_teid(&self) -> Option<TunnelEndpointId> {
        self.bearer.map(|b| b.downlink_teid)
    }

    /// One line of the session table dump:
    /// `subscriber_id state ue_ip uplink_teid downlink_teid`.
    pub fn dump_line(&self) -> String {
        match self.bearer {
            Some(b) => format!(
                "{} {} {} {} {}",
                self.subscriber_id, self.state, b.ue_ip, b.uplink_teid, b.downlink_teid
            ),
            None => format!("{} {} - - -", self.subscriber_id, self.state),
        }
    }
}
