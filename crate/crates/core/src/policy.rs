//! Role-based access control over egresses.
//!
//! Two layers: every egress may carry an allow/block list of roles, and the
//! runtime may hold an ACL mapping roles to `name@egress` patterns. Both join
//! time resolution and query time checks go through [`authorize`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::record::is_identifier;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("invalid target pattern {0:?}")]
    Pattern(String),
    #[error("invalid role {0:?}")]
    Role(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Allow,
    Block,
}

/// Per-egress allowlist or blocklist of roles. `*` stands for every role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EgressPolicy {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub roles: BTreeSet<String>,
}

impl EgressPolicy {
    pub fn allowlist<I: IntoIterator<Item = S>, S: Into<String>>(roles: I) -> Self {
        EgressPolicy {
            mode: Mode::Allow,
            roles: roles.into_iter().map(Into::into).collect(),
        }
    }

    pub fn blocklist<I: IntoIterator<Item = S>, S: Into<String>>(roles: I) -> Self {
        EgressPolicy {
            mode: Mode::Block,
            roles: roles.into_iter().map(Into::into).collect(),
        }
    }

    pub fn allows(&self, role: &str) -> bool {
        let listed = self.roles.contains("*") || self.roles.contains(role);
        match self.mode {
            Mode::Allow => listed,
            Mode::Block => !listed,
        }
    }
}

/// `allow(e.policy, X.role)`. An egress without a policy admits every role.
pub fn allow(policy: Option<&EgressPolicy>, role: &str) -> bool {
    policy.is_none_or(|p| p.allows(role))
}

/// `name@egress`, either side may be `*`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TargetPattern {
    pub name: Option<String>,
    pub egress: Option<String>,
}

impl TargetPattern {
    pub fn parse(s: &str) -> Result<Self, PolicyError> {
        let (name, egress) = s
            .trim()
            .split_once('@')
            .ok_or_else(|| PolicyError::Pattern(s.to_string()))?;
        let part = |p: &str| -> Result<Option<String>, PolicyError> {
            match p {
                "*" => Ok(None),
                p if is_identifier(p) => Ok(Some(p.to_string())),
                _ => Err(PolicyError::Pattern(s.to_string())),
            }
        };
        Ok(TargetPattern {
            name: part(name)?,
            egress: part(egress)?,
        })
    }

    pub fn matches(&self, name: &str, egress: &str) -> bool {
        self.name.as_deref().is_none_or(|n| n == name) && self.egress.as_deref().is_none_or(|e| e == egress)
    }
}

impl fmt::Display for TargetPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}",
            self.name.as_deref().unwrap_or("*"),
            self.egress.as_deref().unwrap_or("*")
        )
    }
}

impl Serialize for TargetPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TargetPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        TargetPattern::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Role → target patterns. Roles without an entry are denied everything.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AclTable {
    roles: BTreeMap<String, Vec<TargetPattern>>,
}

impl AclTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses the `role: ["name@egress", ...]` document form.
    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        let table: AclTable = serde_yaml::from_str(text)?;
        if let Some(bad) = table.roles.keys().find(|r| r.is_empty()) {
            return Err(serde::de::Error::custom(PolicyError::Role(bad.clone())));
        }
        Ok(table)
    }

    pub fn grant(&mut self, role: &str, pattern: TargetPattern) {
        let pats = self.roles.entry(role.to_string()).or_default();
        if !pats.contains(&pattern) {
            pats.push(pattern);
        }
    }

    pub fn patterns(&self, role: &str) -> &[TargetPattern] {
        self.roles.get(role).map_or(&[], Vec::as_slice)
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.roles.keys().map(String::as_str)
    }

    pub fn check_target(&self, role: &str, name: &str, egress: &str) -> bool {
        self.patterns(role).iter().any(|p| p.matches(name, egress))
    }
}

/// The single access predicate: the egress policy admits `role` and, when
/// an ACL is installed, some pattern of `role` covers `name@egress`.
pub fn authorize(
    policy: Option<&EgressPolicy>,
    acl: Option<&AclTable>,
    role: &str,
    name: &str,
    egress: &str,
) -> bool {
    allow(policy, role) && acl.is_none_or(|a| a.check_target(role, name, egress))
}
