//! Stack configuration. Every value is taken from the first source that sets
//! it: command-line flag, `EDGE_*` environment variable, `--config` TOML
//! file, built-in default.

use std::fs;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use edgestack::pipeline::Timeouts;
use edgestack::radio::ClockMode;
use ipnet::Ipv4Net;
use serde::Deserialize;

use crate::error::{CliError, Result};

pub const DEFAULT_STATE_DIR: &str = ".edgestack";
pub const DEFAULT_IP_POOL: &str = "10.45.0.0/24";
pub const DEFAULT_INSTANCE_NET: &str = "127.45.1.0/24";

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with defaults for any of the options below
    #[arg(long, global = true, env = "EDGE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory for the state file, logs, subscribers and artifacts
    #[arg(long, global = true, env = "EDGE_STATE_DIR")]
    pub state_dir: Option<PathBuf>,
    /// Address the core's listeners bind to
    #[arg(long, global = true, env = "EDGE_BIND")]
    pub bind: Option<Ipv4Addr>,
    /// UE address pool
    #[arg(long, global = true, env = "EDGE_IP_POOL")]
    pub ip_pool: Option<Ipv4Net>,
    /// Loopback block edge app instances are addressed from
    #[arg(long, global = true, env = "EDGE_INSTANCE_NET")]
    pub instance_net: Option<Ipv4Net>,
    /// UE signalling (attach/detach) TCP port
    #[arg(long, global = true, env = "EDGE_CONTROL_PORT")]
    pub control_port: Option<u16>,
    /// Admin HTTP port (status, subscribers, shutdown)
    #[arg(long, global = true, env = "EDGE_ADMIN_PORT")]
    pub admin_port: Option<u16>,
    /// GTP-U UDP port
    #[arg(long, global = true, env = "EDGE_GTPU_PORT")]
    pub gtpu_port: Option<u16>,
    /// Push webhook HTTP port
    #[arg(long, global = true, env = "EDGE_WEBHOOK_PORT")]
    pub webhook_port: Option<u16>,
    /// DNS responder UDP port
    #[arg(long, global = true, env = "EDGE_DNS_PORT")]
    pub dns_port: Option<u16>,
    /// Link profile TOML (default: the calibrated profile)
    #[arg(long, global = true, env = "EDGE_PROFILE")]
    pub profile: Option<PathBuf>,
    /// virtual | wall
    #[arg(long, global = true, env = "EDGE_CLOCK")]
    pub clock: Option<ClockMode>,
    /// Test stage timeout in seconds
    #[arg(long, global = true, env = "EDGE_TEST_TIMEOUT")]
    pub test_timeout: Option<u64>,
    /// Build stage timeout in seconds
    #[arg(long, global = true, env = "EDGE_BUILD_TIMEOUT")]
    pub build_timeout: Option<u64>,
    /// Readiness timeout in seconds
    #[arg(long, global = true, env = "EDGE_READINESS_TIMEOUT")]
    pub readiness_timeout: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    state_dir: Option<PathBuf>,
    bind: Option<Ipv4Addr>,
    ip_pool: Option<Ipv4Net>,
    instance_net: Option<Ipv4Net>,
    control_port: Option<u16>,
    admin_port: Option<u16>,
    gtpu_port: Option<u16>,
    webhook_port: Option<u16>,
    dns_port: Option<u16>,
    profile: Option<PathBuf>,
    clock: Option<ClockMode>,
    test_timeout: Option<u64>,
    build_timeout: Option<u64>,
    readiness_timeout: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
pub struct Ports {
    pub control: u16,
    pub admin: u16,
    pub gtpu: u16,
    pub webhook: u16,
    pub dns: u16,
}

impl Default for Ports {
    fn default() -> Self {
        Ports {
            control: 7780,
            admin: 7781,
            gtpu: 2152,
            webhook: 7782,
            dns: 7753,
        }
    }
}

impl Ports {
    pub fn named(&self) -> [(&'static str, u16); 5] {
        [
            ("control", self.control),
            ("admin", self.admin),
            ("gtpu", self.gtpu),
            ("webhook", self.webhook),
            ("dns", self.dns),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    pub state_dir: PathBuf,
    pub bind: Ipv4Addr,
    pub ip_pool: Ipv4Net,
    pub instance_net: Ipv4Net,
    pub ports: Ports,
    pub profile: Option<PathBuf>,
    pub clock: ClockMode,
    pub timeouts: Timeouts,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<StackConfig> {
        let file = match &self.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };
        let d = Ports::default();
        let t = Timeouts::default();
        let secs = |flag: Option<u64>, file: Option<u64>, default: Duration| {
            flag.or(file).map(Duration::from_secs).unwrap_or(default)
        };
        let cfg = StackConfig {
            state_dir: self
                .state_dir
                .clone()
                .or(file.state_dir)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_STATE_DIR)),
            bind: self.bind.or(file.bind).unwrap_or(Ipv4Addr::LOCALHOST),
            ip_pool: self
                .ip_pool
                .or(file.ip_pool)
                .unwrap_or_else(|| DEFAULT_IP_POOL.parse().expect("valid default")),
            instance_net: self
                .instance_net
                .or(file.instance_net)
                .unwrap_or_else(|| DEFAULT_INSTANCE_NET.parse().expect("valid default")),
            ports: Ports {
                control: self.control_port.or(file.control_port).unwrap_or(d.control),
                admin: self.admin_port.or(file.admin_port).unwrap_or(d.admin),
                gtpu: self.gtpu_port.or(file.gtpu_port).unwrap_or(d.gtpu),
                webhook: self.webhook_port.or(file.webhook_port).unwrap_or(d.webhook),
                dns: self.dns_port.or(file.dns_port).unwrap_or(d.dns),
            },
            profile: self.profile.clone().or(file.profile),
            clock: self.clock.or(file.clock).unwrap_or_default(),
            timeouts: Timeouts {
                test: secs(self.test_timeout, file.test_timeout, t.test),
                build: secs(self.build_timeout, file.build_timeout, t.build),
                readiness: secs(self.readiness_timeout, file.readiness_timeout, t.readiness),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        let named = self.ports.named();
        for (i, (a, pa)) in named.iter().enumerate() {
            if *pa == 0 {
                return Err(CliError::Usage(format!("{a} port must be nonzero")));
            }
            if let Some((b, _)) = named[i + 1..].iter().find(|(_, pb)| pb == pa) {
                return Err(CliError::Usage(format!("{a} and {b} ports are both {pa}")));
            }
        }
        for (name, t) in [
            ("test", self.timeouts.test),
            ("build", self.timeouts.build),
            ("readiness", self.timeouts.readiness),
        ] {
            if t.is_zero() {
                return Err(CliError::Usage(format!("{name} timeout must be positive")));
            }
        }
        Ok(())
    }

    pub fn addr(&self, port: u16) -> SocketAddr {
        SocketAddr::from((self.bind, port))
    }

    /// Flags that make a child process resolve to exactly this config.
    pub fn to_args(&self) -> Vec<String> {
        let mut v = vec![
            "--state-dir".to_string(),
            self.state_dir.display().to_string(),
            "--bind".into(),
            self.bind.to_string(),
            "--ip-pool".into(),
            self.ip_pool.to_string(),
            "--instance-net".into(),
            self.instance_net.to_string(),
            "--control-port".into(),
            self.ports.control.to_string(),
            "--admin-port".into(),
            self.ports.admin.to_string(),
            "--gtpu-port".into(),
            self.ports.gtpu.to_string(),
            "--webhook-port".into(),
            self.ports.webhook.to_string(),
            "--dns-port".into(),
            self.ports.dns.to_string(),
            "--test-timeout".into(),
            self.timeouts.test.as_secs().to_string(),
            "--build-timeout".into(),
            self.timeouts.build.as_secs().to_string(),
            "--readiness-timeout".into(),
            self.timeouts.readiness.as_secs().to_string(),
        ];
        if let Some(p) = &self.profile {
            v.push("--profile".into());
            v.push(p.display().to_string());
        }
        v
    }
}
