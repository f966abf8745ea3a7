use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::HarnessError;
use crate::analysis::{PoisonTrigger, DEFAULT_FEE_TOLERANCE_SAT, DEFAULT_WINDOW_S};
use crate::codec::{Codebook, EncodingScheme};
use crate::network::{FeePolicy, NetworkConfig, TopologySpec};
use crate::payment::LatencyModel;
use crate::protocol::{DEFAULT_RESCHEDULE_DELAY_S, DEFAULT_RESERVE_PER_CHANNEL_SAT, DEFAULT_RETRY_LIMIT};

/// Everything a run depends on. Two runs of the same scenario produce
/// identical logs and reports.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub command: String,
    #[serde(default)]
    pub n_cnc_servers: usize,
    #[serde(default = "default_retry")]
    pub retry_limit_k: u32,
    #[serde(default = "default_delay")]
    pub reschedule_delay_s: u64,
    /// A target still unreached after this many reschedules is given up.
    #[serde(default = "default_max_reschedules")]
    pub max_reschedules: u32,
    /// Pin every command route to this many forwarders.
    #[serde(default)]
    pub fixed_intermediary_hops: Option<usize>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub fee_policy: FeePolicy,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub encoding: EncodingSpec,
    pub topology: TopologySpec,
    #[serde(default)]
    pub botmaster: BotmasterSpec,
    #[serde(default)]
    pub cnc: CncSpec,
    #[serde(default)]
    pub collector: CollectorSpec,
    #[serde(default)]
    pub failures: FailureSpec,
    #[serde(default)]
    pub reimbursement: Option<ReimbursementSpec>,
    #[serde(default)]
    pub monitor: Option<MonitorSpec>,
    #[serde(default)]
    pub poison: Vec<PoisonSpec>,
    #[serde(default)]
    pub cover_traffic: Option<CoverSpec>,
}

fn default_retry() -> u32 {
    DEFAULT_RETRY_LIMIT
}
fn default_delay() -> u64 {
    DEFAULT_RESCHEDULE_DELAY_S
}
fn default_max_reschedules() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Ascii,
    Huffman,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub scheme: SchemeName,
    /// Codebook file; the built-in quaternary codebook when absent.
    #[serde(default)]
    pub codebook: Option<PathBuf>,
}

impl Default for EncodingSpec {
    fn default() -> Self {
        EncodingSpec { scheme: SchemeName::Ascii, codebook: None }
    }
}

/// Operator entry point. Opens `channels` private channels into the relay
/// network (into the first layer of a layered topology).
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BotmasterSpec {
    pub onchain_sat: u64,
    pub channels: usize,
    pub channel_capacity_sat: u64,
}

impl Default for BotmasterSpec {
    fn default() -> Self {
        BotmasterSpec { onchain_sat: 10_000_000, channels: 3, channel_capacity_sat: 1_000_000 }
    }
}

/// Each C&C server gets inbound private channels funded by relays (the
/// last layer of a layered topology).
#[derive(Debug, Clone, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CncSpec {
    /// Defaults to `network.channels_per_server`.
    pub channels_per_server: Option<usize>,
    /// Defaults to `network.min_channel_capacity_sat`.
    pub channel_capacity_sat: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectorSpec {
    pub channels: usize,
    pub channel_capacity_sat: u64,
}

impl Default for CollectorSpec {
    fn default() -> Self {
        CollectorSpec { channels: 1, channel_capacity_sat: 500_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureSpec {
    /// Chance that any payment fails at a random hop.
    pub probability: f64,
    pub offline: Vec<OfflineWindow>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineWindow {
    pub node: String,
    #[serde(default)]
    pub from_s: f64,
    /// Offline for the rest of the run when absent.
    #[serde(default)]
    pub until_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReimbursementSpec {
    pub threshold_sat: u64,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    #[serde(default = "default_reserve")]
    pub reserve_per_channel_sat: u64,
    /// Close the collector's channels and sweep to the botmaster at the end.
    #[serde(default = "yes")]
    pub sweep: bool,
}

fn default_tick() -> f64 {
    60.0
}
fn default_reserve() -> u64 {
    DEFAULT_RESERVE_PER_CHANNEL_SAT
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSpec {
    #[serde(default)]
    pub relays: Vec<String>,
    #[serde(default)]
    pub cnc_servers: Vec<String>,
    #[serde(default = "default_window")]
    pub window_s: f64,
    #[serde(default = "default_tolerance")]
    pub fee_tolerance_sat: u64,
}

fn default_window() -> f64 {
    DEFAULT_WINDOW_S
}
fn default_tolerance() -> u64 {
    DEFAULT_FEE_TOLERANCE_SAT
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonSpec {
    pub attacker: String,
    pub target: String,
    pub amount_sat: u64,
    pub trigger: PoisonTrigger,
    /// Firing time for an immediate trigger.
    #[serde(default)]
    pub at_s: f64,
}

/// Random relay-to-relay payments of one fixed amount.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverSpec {
    pub payments: usize,
    pub amount_sat: u64,
    #[serde(default)]
    pub from_s: f64,
    pub until_s: f64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(scenario)
    }

    /// Reads a scenario file. A relative codebook path is taken relative
    /// to the scenario file.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        let mut scenario = Self::from_toml(&text)?;
        if let Some(cb) = &scenario.encoding.codebook {
            if cb.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                scenario.encoding.codebook = Some(base.join(cb));
            }
        }
        Ok(scenario)
    }

    pub fn scheme(&self) -> Result<EncodingScheme, HarnessError> {
        match (&self.encoding.scheme, &self.encoding.codebook) {
            (SchemeName::Ascii, None) => Ok(EncodingScheme::Ascii),
            (SchemeName::Ascii, Some(_)) => Err(HarnessError::Config("the ascii scheme takes no codebook".into())),
            (SchemeName::Huffman, None) => Ok(EncodingScheme::huffman_default()),
            (SchemeName::Huffman, Some(p)) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| HarnessError::Io(p.display().to_string(), e))?;
                Ok(EncodingScheme::Huffman(Codebook::parse(&text)?))
            }
        }
    }

    pub fn cnc_channels(&self) -> usize {
        self.cnc.channels_per_server.unwrap_or(self.network.channels_per_server)
    }

    pub fn cnc_capacity_sat(&self) -> u64 {
        self.cnc.channel_capacity_sat.unwrap_or(self.network.min_channel_capacity_sat)
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<EncodingScheme, HarnessError> {
        let scheme = self.scheme()?;
        if !scheme.can_encode(&self.command) {
            return Err(HarnessError::Config(format!(
                "command cannot be encoded with the {} scheme",
                scheme.name()
            )));
        }
        self.latency.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.failures.probability) {
            return Err(HarnessError::Config("failure probability must lie in [0, 1]".into()));
        }
        if let Some(r) = &self.reimbursement {
            if r.threshold_sat == 0 {
                return Err(HarnessError::Config("reimbursement threshold must be positive".into()));
            }
            if !(r.tick_s.is_finite() && r.tick_s > 0.0) {
                return Err(HarnessError::Config("reimbursement tick must be positive".into()));
            }
        }
        if let Some(m) = &self.monitor {
            if !(m.window_s.is_finite() && m.window_s > 0.0) {
                return Err(HarnessError::Config("monitor window must be positive".into()));
            }
        }
        if let Some(c) = &self.cover_traffic {
            if !(c.from_s >= 0.0 && c.until_s > c.from_s) {
                return Err(HarnessError::Config("cover traffic needs 0 <= from_s < until_s".into()));
            }
        }
        for w in &self.failures.offline {
            if w.from_s < 0.0 || w.until_s.is_some_and(|u| u < w.from_s) {
                return Err(HarnessError::Config(format!("bad offline window for {}", w.node)));
            }
        }
        Ok(scheme)
    }

    /// The table-replication setup: a four-layer relay mesh so every
    /// command route crosses exactly four forwarders, default fees and a
    /// fixed 7 s delivery time.
    pub fn replication(n_cnc_servers: usize, scheme: SchemeName, command: &str) -> Self {
        Scenario {
            seed: 2018,
            command: command.to_string(),
            n_cnc_servers,
            retry_limit_k: DEFAULT_RETRY_LIMIT,
            reschedule_delay_s: DEFAULT_RESCHEDULE_DELAY_S,
            max_reschedules: default_max_reschedules(),
            fixed_intermediary_hops: Some(4),
            network: NetworkConfig::default(),
            fee_policy: FeePolicy::default(),
            latency: LatencyModel::Deterministic { seconds: 7.0 },
            encoding: EncodingSpec { scheme, codebook: None },
            topology: TopologySpec::Layered {
                layers: 4,
                width: 6,
                capacity_sat: 2_000_000,
                relay_onchain_sat: 10_000_000,
            },
            botmaster: BotmasterSpec::default(),
            cnc: CncSpec::default(),
            collector: CollectorSpec::default(),
            failures: FailureSpec::default(),
            reimbursement: None,
            monitor: None,
            poison: Vec::new(),
            cover_traffic: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
command = "hi"
[topology]
kind = "layered"
layers = 2
width = 2
capacity_sat = 100000
relay_onchain_sat = 1000000
"#;

    #[test]
    fn defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.retry_limit_k, 3);
        assert_eq!(s.reschedule_delay_s, 600);
        assert_eq!(s.network, NetworkConfig::default());
        assert_eq!(s.latency, LatencyModel::Deterministic { seconds: 7.0 });
        assert_eq!(s.cnc_channels(), 3);
        assert_eq!(s.cnc_capacity_sat(), 20_000);
        assert_eq!(s.validate().unwrap(), EncodingScheme::Ascii);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("bogus = 1\n{MINIMAL}");
        assert!(matches!(Scenario::from_toml(&text), Err(HarnessError::Config(_))));
        let nested = MINIMAL.replace("width = 2", "width = 2\ncolour = 1");
        assert!(Scenario::from_toml(&nested).is_err());
    }

    #[test]
    fn inconsistent_scheme_rejected() {
        let text = MINIMAL.replace("command = \"hi\"", "command = \"HI\"\n[encoding]\nscheme = \"huffman\"");
        let s = Scenario::from_toml(&text).unwrap();
        assert!(matches!(s.validate(), Err(HarnessError::Config(m)) if m.contains("huffman")));
    }

    #[test]
    fn nested_sections_parse() {
        let text = format!(
            "{MINIMAL}\n[latency]\nkind = \"uniform\"\nlo = 4.0\nhi = 10.0\n\
             [reimbursement]\nthreshold_sat = 2000\n\
             [[poison]]\nattacker = \"L1r0\"\ntarget = \"cnc0\"\namount_sat = 3\n\
             trigger = {{ kind = \"when_receiving\", after_payload = 2 }}\n"
        );
        let s = Scenario::from_toml(&text).unwrap();
        assert_eq!(s.latency, LatencyModel::Uniform { lo: 4.0, hi: 10.0 });
        assert_eq!(s.reimbursement.as_ref().unwrap().tick_s, 60.0);
        assert_eq!(s.poison[0].trigger, PoisonTrigger::WhenReceiving { after_payload: 2 });
    }
}
