use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SlimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Reach,
    Discovery,
    Safety,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Reach, Channel::Discovery, Channel::Safety];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Reach => "reach",
            Channel::Discovery => "discovery",
            Channel::Safety => "safety",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoTag {
    Slim,
    SlimUr,
    SlimNr,
    NoReach,
    NoDiscovery,
    NoSafety,
    Lsd,
    Diayn,
}

impl AlgoTag {
    pub const ALL: [AlgoTag; 8] = [
        AlgoTag::Slim,
        AlgoTag::SlimUr,
        AlgoTag::SlimNr,
        AlgoTag::NoReach,
        AlgoTag::NoDiscovery,
        AlgoTag::NoSafety,
        AlgoTag::Lsd,
        AlgoTag::Diayn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlgoTag::Slim => "slim",
            AlgoTag::SlimUr => "slim_ur",
            AlgoTag::SlimNr => "slim_nr",
            AlgoTag::NoReach => "no_reach",
            AlgoTag::NoDiscovery => "no_discovery",
            AlgoTag::NoSafety => "no_safety",
            AlgoTag::Lsd => "lsd",
            AlgoTag::Diayn => "diayn",
        }
    }
}

impl fmt::Display for AlgoTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgoTag {
    type Err = SlimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlgoTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| SlimError::Config(format!("unknown variant '{s}'")))
    }
}

/// How channel rewards reach the critics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticMode {
    /// One critic per channel; each channel's advantages are standardized
    /// before the weighted sum.
    PerChannel,
    /// One critic on the plain sum of channel rewards.
    RawSum,
    /// One critic on the sum of per-channel batch-standardized rewards.
    StandardizedSum,
}

/// Where the discovery channel comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoverySource {
    Displacement,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlgoVariant {
    pub tag: AlgoTag,
    pub channels: Vec<Channel>,
    pub mode: CriticMode,
    pub discovery: DiscoverySource,
}

impl AlgoVariant {
    pub fn new(tag: AlgoTag) -> Self {
        use Channel::*;
        let (channels, mode, discovery) = match tag {
            AlgoTag::Slim => (
                vec![Reach, Discovery, Safety],
                CriticMode::PerChannel,
                DiscoverySource::Displacement,
            ),
            AlgoTag::SlimUr => (
                vec![Reach, Discovery, Safety],
                CriticMode::RawSum,
                DiscoverySource::Displacement,
            ),
            AlgoTag::SlimNr => (
                vec![Reach, Discovery, Safety],
                CriticMode::StandardizedSum,
                DiscoverySource::Displacement,
            ),
            AlgoTag::NoReach => (
                vec![Discovery, Safety],
                CriticMode::PerChannel,
                DiscoverySource::Displacement,
            ),
            AlgoTag::NoDiscovery => (
                vec![Reach, Safety],
                CriticMode::PerChannel,
                DiscoverySource::Displacement,
            ),
            AlgoTag::NoSafety => (
                vec![Reach, Discovery],
                CriticMode::PerChannel,
                DiscoverySource::Displacement,
            ),
            AlgoTag::Lsd => (vec![Discovery], CriticMode::RawSum, DiscoverySource::Displacement),
            AlgoTag::Diayn => (vec![Discovery], CriticMode::RawSum, DiscoverySource::Discriminator),
        };
        AlgoVariant {
            tag,
            channels,
            mode,
            discovery,
        }
    }

    pub fn has(&self, c: Channel) -> bool {
        self.channels.contains(&c)
    }

    pub fn critic_count(&self) -> usize {
        match self.mode {
            CriticMode::PerChannel => self.channels.len(),
            CriticMode::RawSum | CriticMode::StandardizedSum => 1,
        }
    }

    /// Names of the critics this variant trains.
    pub fn critic_names(&self) -> Vec<&'static str> {
        match self.mode {
            CriticMode::PerChannel => self.channels.iter().map(|c| c.name()).collect(),
            CriticMode::RawSum | CriticMode::StandardizedSum => vec!["sum"],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critic_counts() {
        assert_eq!(AlgoVariant::new(AlgoTag::Slim).critic_count(), 3);
        assert_eq!(AlgoVariant::new(AlgoTag::SlimUr).critic_count(), 1);
        assert_eq!(AlgoVariant::new(AlgoTag::SlimNr).critic_count(), 1);
        let nd = AlgoVariant::new(AlgoTag::NoDiscovery);
        assert_eq!(nd.channels, vec![Channel::Reach, Channel::Safety]);
        assert_eq!(nd.critic_count(), 2);
        let d = AlgoVariant::new(AlgoTag::Diayn);
        assert_eq!(d.channels, vec![Channel::Discovery]);
        assert_eq!(d.discovery, DiscoverySource::Discriminator);
        assert_eq!(AlgoVariant::new(AlgoTag::Lsd).critic_count(), 1);
    }

    #[test]
    fn tag_round_trip() {
        for t in AlgoTag::ALL {
            assert_eq!(t.as_str().parse::<AlgoTag>().unwrap(), t);
            let j = serde_json::to_string(&t).unwrap();
            assert_eq!(j, format!("\"{}\"", t.as_str()));
        }
        assert!("slim2".parse::<AlgoTag>().is_err());
    }
}
