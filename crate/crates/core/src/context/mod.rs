//! Context metadata and the declarative configuration of a context data
//! router: kind, name, role, ingresses and egresses.
//!
//! ```yaml
//! kind: cot.dev/v1/Building
//! name: BioHall
//! role: building
//! ingress:
//!   - name: room_occupancy
//!     intent: ["*/*/Room@occupancy"]
//!     flow_agg: "avg(occupancy) by slot"
//!     patch_from: true
//! egress:
//!   - name: occupancy
//!     policy: {mode: allow, roles: ["*"]}
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cdg::{RuleError, RuleSet, Unmatched};
use crate::flow::{parse_pipeline, FlowError, Pipeline};
use crate::policy::EgressPolicy;
use crate::record::{is_identifier, parse_schema, RecordError, Schema};

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("invalid kind {0:?}: expected group/version/name")]
    Kind(String),
    #[error("invalid intent {0:?}")]
    Intent(String),
    #[error("invalid name {0:?}")]
    Name(String),
    #[error("duplicate {what} {id:?}")]
    Duplicate { what: &'static str, id: String },
    #[error("{id}: reserved egress name")]
    Reserved { id: String },
    #[error("{at}: {source}")]
    Flow { at: String, source: FlowError },
    #[error("{at}: {source}")]
    Rule { at: String, source: RuleError },
    #[error("{at}: invalid schema: {source}")]
    Schema { at: String, source: RecordError },
    #[error("invalid config document: {0}")]
    Yaml(#[from] serde_yaml::Error),
}

/// `group/version/name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Kind {
    pub group: String,
    pub version: String,
    pub name: String,
}

fn is_group(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_'))
}

impl FromStr for Kind {
    type Err = ContextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        match parts[..] {
            [g, v, n] if is_group(g) && is_identifier(v) && is_identifier(n) => Ok(Kind {
                group: g.into(),
                version: v.into(),
                name: n.into(),
            }),
            _ => Err(ContextError::Kind(s.to_string())),
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.group, self.version, self.name)
    }
}

/// Which contexts an intent refers to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Selector {
    /// A context by name.
    Direct(String),
    /// A kind pattern; `None` components are `*`.
    Kind {
        group: Option<String>,
        version: Option<String>,
        name: Option<String>,
    },
    Any,
}

impl Selector {
    pub fn is_direct(&self) -> bool {
        matches!(self, Selector::Direct(_))
    }
}

impl FromStr for Selector {
    type Err = ContextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ContextError::Intent(s.to_string());
        if s == "any" {
            return Ok(Selector::Any);
        }
        let body = s.strip_prefix("kind:");
        if body.is_none() && !s.contains('/') {
            return if is_identifier(s) {
                Ok(Selector::Direct(s.to_string()))
            } else {
                Err(bad())
            };
        }
        let body = body.unwrap_or(s);
        if body == "any" || body == "*" {
            return Ok(Selector::Any);
        }
        let parts: Vec<&str> = body.split('/').collect();
        let [g, v, n] = parts[..] else { return Err(bad()) };
        let comp = |p: &str, ok: fn(&str) -> bool| match p {
            "*" => Ok(None),
            p if ok(p) => Ok(Some(p.to_string())),
            _ => Err(bad()),
        };
        Ok(Selector::Kind {
            group: comp(g, is_group)?,
            version: comp(v, is_identifier)?,
            name: comp(n, is_identifier)?,
        })
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Direct(n) => f.write_str(n),
            Selector::Any => f.write_str("any"),
            Selector::Kind { group, version, name } => {
                let c = |o: &Option<String>| o.clone().unwrap_or_else(|| "*".into());
                write!(f, "{}/{}/{}", c(group), c(version), c(name))
            }
        }
    }
}

/// `selector@egress`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Intent {
    pub selector: Selector,
    pub egress: String,
}

impl FromStr for Intent {
    type Err = ContextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (sel, egress) = s.rsplit_once('@').ok_or_else(|| ContextError::Intent(s.to_string()))?;
        if !is_identifier(egress) {
            return Err(ContextError::Intent(s.to_string()));
        }
        Ok(Intent {
            selector: sel.parse().map_err(|_| ContextError::Intent(s.to_string()))?,
            egress: egress.to_string(),
        })
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.selector, self.egress)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngressSpec {
    pub id: String,
    pub intents: Vec<Intent>,
    pub rules: RuleSet,
    /// Applied to each source separately.
    pub flow: Pipeline,
    /// Applied to the merged output of every source.
    pub flow_agg: Pipeline,
    pub patch_from: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgressSpec {
    pub id: String,
    pub flow: Pipeline,
    pub policy: Option<EgressPolicy>,
    /// Declared output schemas, offered to rule matching at join time.
    pub schemas: Vec<Schema>,
}

/// A validated context configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSpec {
    pub kind: Kind,
    pub name: String,
    pub role: String,
    pub ingress: Vec<IngressSpec>,
    pub egress: Vec<EgressSpec>,
}

impl ContextSpec {
    pub fn egress(&self, id: &str) -> Option<&EgressSpec> {
        self.egress.iter().find(|e| e.id == id)
    }

    pub fn ingress(&self, id: &str) -> Option<&IngressSpec> {
        self.ingress.iter().find(|i| i.id == id)
    }

    /// Parses one YAML document.
    pub fn from_yaml(text: &str) -> Result<Self, ContextError> {
        let cfg: ContextConfig = serde_yaml::from_str(text)?;
        cfg.validate()
    }
}

/// Splits a multi-document YAML stream into per-document results.
pub fn parse_documents(text: &str) -> Vec<Result<ContextSpec, ContextError>> {
    serde_yaml::Deserializer::from_str(text)
        .map(|doc| {
            ContextConfig::deserialize(doc)
                .map_err(ContextError::from)
                .and_then(ContextConfig::validate)
        })
        .collect()
}

/// Branch names taken by the store layout.
pub const RESERVED_BRANCHES: [&str; 3] = ["main", "errors", "log"];

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }
}

/// The raw document form before validation.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub kind: String,
    pub name: String,
    #[serde(default)]
    pub role: Option<String>,
    #[serde(default)]
    pub ingress: Vec<IngressConfig>,
    #[serde(default)]
    pub egress: Vec<EgressConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct IngressConfig {
    pub name: String,
    #[serde(default)]
    intent: Option<OneOrMany>,
    /// Pre-resolved direct references; treated as direct intents.
    #[serde(default)]
    sources: Option<OneOrMany>,
    #[serde(default)]
    pub rules: Vec<RuleConfig>,
    /// What to do with schemas no rule matches: `accept` or `reject`.
    #[serde(default)]
    pub policy: Option<String>,
    #[serde(default)]
    pub flow: String,
    #[serde(default)]
    pub flow_agg: String,
    #[serde(default)]
    pub patch_from: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    #[serde(rename = "match")]
    pub matches: String,
    pub action: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EgressConfig {
    pub name: String,
    #[serde(default)]
    pub flow: String,
    #[serde(default)]
    pub policy: Option<EgressPolicy>,
    #[serde(default)]
    pub schemas: Vec<String>,
}

fn pipeline(at: &str, text: &str) -> Result<Pipeline, ContextError> {
    parse_pipeline(text).map_err(|source| ContextError::Flow {
        at: at.to_string(),
        source,
    })
}

impl ContextConfig {
    pub fn validate(self) -> Result<ContextSpec, ContextError> {
        let kind: Kind = self.kind.parse()?;
        if !is_identifier(&self.name) {
            return Err(ContextError::Name(self.name));
        }
        let role = self.role.unwrap_or_else(|| self.name.clone());
        if role.is_empty() {
            return Err(ContextError::Name(role));
        }
        let mut ids = BTreeSet::new();
        let mut ingress = Vec::new();
        for ig in self.ingress {
            let at = format!("{}.ingress.{}", self.name, ig.name);
            if !is_identifier(&ig.name) {
                return Err(ContextError::Name(ig.name));
            }
            if !ids.insert(ig.name.clone()) {
                return Err(ContextError::Duplicate {
                    what: "ingress",
                    id: ig.name,
                });
            }
            let mut intents: Vec<Intent> = Vec::new();
            for s in ig.intent.map(OneOrMany::into_vec).unwrap_or_default() {
                intents.push(s.parse()?);
            }
            for s in ig.sources.map(OneOrMany::into_vec).unwrap_or_default() {
                let intent: Intent = s.parse()?;
                if !intent.selector.is_direct() {
                    return Err(ContextError::Intent(s));
                }
                intents.push(intent);
            }
            let mut seen = BTreeSet::new();
            intents.retain(|i| seen.insert(i.clone()));
            let unmatched = match ig.policy.as_deref() {
                None | Some("accept") => Unmatched::Accept,
                Some("reject") => Unmatched::Reject,
                Some(other) => {
                    return Err(ContextError::Rule {
                        at,
                        source: RuleError::Syntax {
                            pos: 0,
                            msg: format!("unknown ingress policy `{other}`"),
                        },
                    })
                }
            };
            let rules = RuleSet::parse(
                ig.rules.iter().map(|r| (r.matches.as_str(), r.action.as_str())),
                unmatched,
            )
            .map_err(|source| ContextError::Rule { at: at.clone(), source })?;
            ingress.push(IngressSpec {
                flow: pipeline(&format!("{at}.flow"), &ig.flow)?,
                flow_agg: pipeline(&format!("{at}.flow_agg"), &ig.flow_agg)?,
                id: ig.name,
                intents,
                rules,
                patch_from: ig.patch_from,
            });
        }
        let mut ids = BTreeSet::new();
        let mut egress = Vec::new();
        for eg in self.egress {
            let at = format!("{}.egress.{}", self.name, eg.name);
            if !is_identifier(&eg.name) {
                return Err(ContextError::Name(eg.name));
            }
            if RESERVED_BRANCHES.contains(&eg.name.as_str()) || eg.name.contains('.') {
                return Err(ContextError::Reserved { id: eg.name });
            }
            if !ids.insert(eg.name.clone()) {
                return Err(ContextError::Duplicate {
                    what: "egress",
                    id: eg.name,
                });
            }
            let mut schemas = Vec::new();
            for s in &eg.schemas {
                schemas.push(parse_schema(s).map_err(|source| ContextError::Schema {
                    at: at.clone(),
                    source,
                })?);
            }
            egress.push(EgressSpec {
                flow: pipeline(&format!("{at}.flow"), &eg.flow)?,
                id: eg.name,
                policy: eg.policy,
                schemas,
            });
        }
        Ok(ContextSpec {
            kind,
            name: self.name,
            role,
            ingress,
            egress,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BIOHALL: &str = r#"
kind: cot.dev/v1/Building
name: BioHall
role: building
ingress:
  - name: room_energy
    intent: "*/*/Room@energy"
    sources: [BioLab@energy]
    flow: "cut room_energy,unit"
  - name: room_occupancy
    intent: ["*/*/Room@occupancy"]
    flow_agg: "avg(occupancy) by slot"
    patch_from: true
egress:
  - name: energy
  - name: occupancy
    flow: "rename room_occupancy:=occupancy"
    policy: {mode: allow, roles: ["*"]}
    schemas: ["{occupancy:float64}"]
"#;

    #[test]
    fn biohall_config() {
        let spec = ContextSpec::from_yaml(BIOHALL).unwrap();
        assert_eq!(spec.kind.to_string(), "cot.dev/v1/Building");
        assert_eq!(spec.ingress.len(), 2);
        let ig = &spec.ingress[0];
        assert_eq!(
            ig.intents.iter().map(|i| i.to_string()).collect::<Vec<_>>(),
            ["*/*/Room@energy", "BioLab@energy"]
        );
        assert!(spec.ingress[1].patch_from);
        assert_eq!(spec.egress[1].schemas[0].canonical(), "{occupancy:float64}");
        assert!(spec.egress[0].policy.is_none());
    }

    #[test]
    fn empty_context_is_valid() {
        let spec = ContextSpec::from_yaml("kind: a/v1/b\nname: x").unwrap();
        assert!(spec.ingress.is_empty() && spec.egress.is_empty());
        assert_eq!(spec.role, "x");
    }

    #[test]
    fn validation_errors() {
        let dup = "kind: a/v1/b\nname: x\negress: [{name: e}, {name: e}]";
        assert!(matches!(ContextSpec::from_yaml(dup), Err(ContextError::Duplicate { .. })));
        let bad_flow = "kind: a/v1/b\nname: x\negress: [{name: e, flow: \"cut\"}]";
        assert!(matches!(ContextSpec::from_yaml(bad_flow), Err(ContextError::Flow { .. })));
        let bad_kind = "kind: building\nname: x";
        assert!(matches!(ContextSpec::from_yaml(bad_kind), Err(ContextError::Kind(_))));
        let reserved = "kind: a/v1/b\nname: x\negress: [{name: main}]";
        assert!(matches!(ContextSpec::from_yaml(reserved), Err(ContextError::Reserved { .. })));
        let indirect_source = "kind: a/v1/b\nname: x\ningress: [{name: i, sources: [\"any@e\"]}]";
        assert!(matches!(ContextSpec::from_yaml(indirect_source), Err(ContextError::Intent(_))));
    }

    #[test]
    fn intents_parse() {
        let cases = [
            ("BioLab@energy", Selector::Direct("BioLab".into())),
            ("any@noise", Selector::Any),
            ("kind:any@noise", Selector::Any),
            (
                "vendor_x/*/phone@loc",
                Selector::Kind {
                    group: Some("vendor_x".into()),
                    version: None,
                    name: Some("phone".into()),
                },
            ),
            (
                "kind:*/*/Room@occupancy",
                Selector::Kind {
                    group: None,
                    version: None,
                    name: Some("Room".into()),
                },
            ),
        ];
        for (text, sel) in cases {
            let i: Intent = text.parse().unwrap();
            assert_eq!(i.selector, sel, "{text}");
        }
        for bad in ["noegress", "a/b@e", "x@", "a b@e"] {
            assert!(bad.parse::<Intent>().is_err(), "{bad}");
        }
    }

    #[test]
    fn multi_document_streams() {
        let text = format!("{BIOHALL}\n---\nkind: a/v1/b\nname: x\negress: [{{name: e, flow: \"bogus\"}}]\n---\nkind: a/v1/b\nname: y\n");
        let docs = parse_documents(&text);
        assert_eq!(docs.len(), 3);
        assert!(docs[0].is_ok() && docs[1].is_err() && docs[2].is_ok());
    }
}
