//! Match:action rules and their compilation into pipeline prefixes.
//!
//! ```text
//! has <watt: string>        extract
//! has <power: string>       rename watt:=power
//! *                         reject
//! ```

use std::collections::BTreeMap;
use std::fmt;

use crate::flow::{parse_pipeline, Expr, Pipeline, Stage};
use crate::record::{Scanner, Schema, Type, Value, EVENT_TS, FROM, TS};

/// Reject reason for records whose schema hit a `reject` rule.
pub const RULE_REJECT: &str = "rule-reject";
/// Reject reason for schemas no rule matched, under `policy: reject`.
pub const UNMATCHED_SCHEMA: &str = "unmatched-schema";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("wildcard rule must be last")]
    WildcardNotLast,
    #[error("invalid action: {0}")]
    Action(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Match {
    Wildcard,
    /// Every listed field is present with the given type (a null field
    /// matches any type).
    Has(Vec<(String, Type)>),
    /// The schema equals this one exactly.
    Is(Schema),
    All(Vec<Match>),
    Any(Vec<Match>),
}

impl Match {
    pub fn matches(&self, schema: &Schema) -> bool {
        match self {
            Match::Wildcard => true,
            Match::Has(fields) => fields.iter().all(|(f, ty)| {
                matches!(schema.field(f), Some(t) if t == ty || *t == Type::Null)
            }),
            Match::Is(s) => s == schema,
            Match::All(ms) => ms.iter().all(|m| m.matches(schema)),
            Match::Any(ms) => ms.iter().any(|m| m.matches(schema)),
        }
    }

    /// Fields of `schema` that this predicate is about.
    fn matched_fields(&self, schema: &Schema, out: &mut Vec<String>) {
        match self {
            Match::Wildcard | Match::Is(_) => out.extend(schema.fields.iter().map(|(n, _)| n.clone())),
            Match::Has(fields) => out.extend(fields.iter().map(|(f, _)| f.clone())),
            Match::All(ms) => ms.iter().for_each(|m| m.matched_fields(schema, out)),
            Match::Any(ms) => ms
                .iter()
                .filter(|m| m.matches(schema))
                .for_each(|m| m.matched_fields(schema, out)),
        }
    }

    pub fn parse(text: &str) -> Result<Match, RuleError> {
        let mut sc = Scanner::new(text);
        let m = parse_match(&mut sc)?;
        sc.skip_ws();
        if !sc.at_end() {
            return Err(syntax(&sc, "trailing characters after match"));
        }
        Ok(m)
    }
}

fn syntax(sc: &Scanner, msg: &str) -> RuleError {
    RuleError::Syntax {
        pos: sc.pos(),
        msg: msg.to_string(),
    }
}

fn lift(e: crate::record::RecordError) -> RuleError {
    match e {
        crate::record::RecordError::Syntax { pos, msg } | crate::record::RecordError::TypeConflict { pos, msg } => {
            RuleError::Syntax { pos, msg }
        }
        other => RuleError::Syntax {
            pos: 0,
            msg: other.to_string(),
        },
    }
}

fn parse_match(sc: &mut Scanner) -> Result<Match, RuleError> {
    sc.skip_ws();
    if sc.eat("*") {
        return Ok(Match::Wildcard);
    }
    for (kw, all) in [("all", true), ("any", false)] {
        if sc.eat_keyword(kw) {
            sc.skip_ws();
            sc.expect("(").map_err(lift)?;
            let mut ms = vec![parse_match(sc)?];
            loop {
                sc.skip_ws();
                if sc.eat(")") {
                    break;
                }
                sc.expect(",").map_err(lift)?;
                ms.push(parse_match(sc)?);
            }
            return Ok(if all { Match::All(ms) } else { Match::Any(ms) });
        }
    }
    if sc.eat_keyword("has") {
        sc.skip_ws();
        sc.expect("<").map_err(lift)?;
        let mut fields = Vec::new();
        loop {
            sc.skip_ws();
            let f = sc.ident().map_err(lift)?;
            sc.skip_ws();
            sc.expect(":").map_err(lift)?;
            let ty = sc.type_desc().map_err(lift)?;
            fields.push((f, ty));
            sc.skip_ws();
            if sc.eat(">") {
                return Ok(Match::Has(fields));
            }
            sc.expect(",").map_err(lift)?;
        }
    }
    if sc.eat_keyword("is") {
        sc.skip_ws();
        let wrapped = sc.eat("<");
        let Type::Record(fields) = sc.type_desc().map_err(lift)? else {
            return Err(syntax(sc, "expected a record type"));
        };
        if wrapped {
            sc.skip_ws();
            sc.expect(">").map_err(lift)?;
        }
        return Ok(Match::Is(Schema { fields }));
    }
    Err(syntax(sc, "expected `*`, `has`, `is`, `all` or `any`"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Keep only the matched fields (plus `ts`, `event_ts` and `from`).
    Extract,
    /// Route to the errors branch.
    Reject,
    /// Discard silently.
    Drop,
    /// Route to the log branch instead of the store.
    Log(String),
    /// Delete the listed fields.
    Trim(Vec<String>),
    Rename(Vec<(String, String)>),
    /// A stateless pipeline fragment, used verbatim.
    Convert(Pipeline),
    Accept,
}

impl Action {
    pub fn parse(text: &str) -> Result<Action, RuleError> {
        let t = text.trim();
        let (word, rest) = t.split_once(char::is_whitespace).unwrap_or((t, ""));
        let (word, rest) = match word.split_once('(') {
            Some((w, _)) => (w, &t[w.len()..]),
            None => (word, rest.trim()),
        };
        let no_args = |a: Action| {
            if rest.is_empty() {
                Ok(a)
            } else {
                Err(RuleError::Action(t.to_string()))
            }
        };
        match word {
            "extract" => no_args(Action::Extract),
            "reject" => no_args(Action::Reject),
            "drop" => no_args(Action::Drop),
            "accept" => no_args(Action::Accept),
            "log" => {
                if rest.is_empty() {
                    return Ok(Action::Log("log".into()));
                }
                match single_stage(t)? {
                    Stage::Log(label) => Ok(Action::Log(label)),
                    _ => Err(RuleError::Action(t.to_string())),
                }
            }
            "rename" => match single_stage(t)? {
                Stage::Rename(pairs) => Ok(Action::Rename(pairs)),
                _ => Err(RuleError::Action(t.to_string())),
            },
            "trim" => match single_stage(&format!("cut {rest}"))? {
                Stage::Cut(fields) => Ok(Action::Trim(fields)),
                _ => Err(RuleError::Action(t.to_string())),
            },
            "convert" => {
                let p = parse_pipeline(rest).map_err(|e| RuleError::Action(e.to_string()))?;
                if !p.is_stateless() {
                    return Err(RuleError::Action(format!("convert fragment must be stateless: {rest}")));
                }
                Ok(Action::Convert(p))
            }
            _ => Err(RuleError::Action(t.to_string())),
        }
    }

    fn stages(&self, matched: &Match, schema: &Schema) -> Vec<Stage> {
        let drop = || Stage::Where(Expr::Lit(Value::Bool(false)));
        match self {
            Action::Accept => Vec::new(),
            Action::Reject => vec![Stage::Reject(RULE_REJECT.into())],
            Action::Drop => vec![drop()],
            Action::Log(label) => vec![Stage::Log(label.clone()), drop()],
            Action::Rename(pairs) => vec![Stage::Rename(pairs.clone())],
            Action::Convert(p) => p.stages().to_vec(),
            Action::Extract => {
                let mut wanted = Vec::new();
                matched.matched_fields(schema, &mut wanted);
                wanted.extend([TS, EVENT_TS, FROM].map(String::from));
                let keep: Vec<String> = schema
                    .fields
                    .iter()
                    .map(|(n, _)| n.clone())
                    .filter(|n| wanted.contains(n))
                    .collect();
                if keep.len() == schema.fields.len() {
                    Vec::new()
                } else if keep.is_empty() {
                    vec![drop()]
                } else {
                    vec![Stage::Cut(keep)]
                }
            }
            Action::Trim(fields) => {
                let keep: Vec<String> = schema
                    .fields
                    .iter()
                    .map(|(n, _)| n.clone())
                    .filter(|n| !fields.contains(n))
                    .collect();
                if keep.len() == schema.fields.len() {
                    Vec::new()
                } else if keep.is_empty() {
                    vec![drop()]
                } else {
                    vec![Stage::Cut(keep)]
                }
            }
        }
    }
}

fn single_stage(text: &str) -> Result<Stage, RuleError> {
    let p = parse_pipeline(text).map_err(|e| RuleError::Action(e.to_string()))?;
    match p.stages() {
        [s] => Ok(s.clone()),
        _ => Err(RuleError::Action(text.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub matches: Match,
    pub action: Action,
}

/// Treatment of schemas that no rule matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Unmatched {
    #[default]
    Accept,
    Reject,
}

/// An ordered rule table; first match wins.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    rules: Vec<Rule>,
    unmatched: Unmatched,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>, unmatched: Unmatched) -> Result<Self, RuleError> {
        if let Some(i) = rules.iter().position(|r| r.matches == Match::Wildcard) {
            if i + 1 != rules.len() {
                return Err(RuleError::WildcardNotLast);
            }
        }
        Ok(RuleSet { rules, unmatched })
    }

    pub fn parse<'a, I>(rules: I, unmatched: Unmatched) -> Result<Self, RuleError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let rules = rules
            .into_iter()
            .map(|(m, a)| {
                Ok(Rule {
                    matches: Match::parse(m)?,
                    action: Action::parse(a)?,
                })
            })
            .collect::<Result<Vec<_>, RuleError>>()?;
        RuleSet::new(rules, unmatched)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// The prefix injected in front of the ingress flow for records of
    /// `schema`. An empty rule table accepts everything as is.
    pub fn compile(&self, schema: &Schema) -> Pipeline {
        if self.rules.is_empty() {
            return Pipeline::identity();
        }
        let stages = match self.rules.iter().find(|r| r.matches.matches(schema)) {
            Some(rule) => rule.action.stages(&rule.matches, schema),
            None => match self.unmatched {
                Unmatched::Accept => Vec::new(),
                Unmatched::Reject => vec![Stage::Reject(UNMATCHED_SCHEMA.into())],
            },
        };
        Pipeline::new(stages).expect("rule actions compile to valid stages")
    }
}

/// Compiled prefixes for the schemas an egress advertises, keyed by
/// canonical schema string. Schemas seen later are compiled on demand with
/// [`RuleSet::compile`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Injection {
    pub prefixes: BTreeMap<String, Pipeline>,
}

impl Injection {
    pub fn get(&self, schema: &Schema) -> Option<&Pipeline> {
        self.prefixes.get(&schema.canonical())
    }
}

pub fn compile_injection(rules: &RuleSet, schemas: &[Schema]) -> Injection {
    Injection {
        prefixes: schemas
            .iter()
            .map(|s| (s.canonical(), rules.compile(s)))
            .collect(),
    }
}

impl fmt::Display for Injection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (s, p)) in self.prefixes.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{s} => {p}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::parse_schema;

    fn paper_table() -> RuleSet {
        RuleSet::parse(
            [
                ("has <watt: string>", "extract"),
                ("has <power: string>", "rename watt:=power"),
                ("*", "reject"),
            ],
            Unmatched::Accept,
        )
        .unwrap()
    }

    fn compiled(rules: &RuleSet, schema: &str) -> String {
        rules.compile(&parse_schema(schema).unwrap()).to_string()
    }

    #[test]
    fn paper_rule_table() {
        let rules = paper_table();
        assert_eq!(compiled(&rules, "{power:string}"), "rename watt:=power");
        assert_eq!(compiled(&rules, "{humidity:float64}"), "reject(\"rule-reject\")");
        assert_eq!(
            compiled(&rules, "{measurement:string,watt:string,ts:time}"),
            "cut watt,ts"
        );
        assert_eq!(compiled(&rules, "{watt:string}"), "");
    }

    #[test]
    fn empty_rules_accept_everything() {
        let rules = RuleSet::default();
        assert!(rules.compile(&parse_schema("{x:int64}").unwrap()).is_identity());
        let strict = RuleSet::new(Vec::new(), Unmatched::Reject).unwrap();
        assert!(strict.compile(&parse_schema("{x:int64}").unwrap()).is_identity());
    }

    #[test]
    fn unmatched_policy() {
        let rules = [("has <a: int64>", "accept")];
        let open = RuleSet::parse(rules, Unmatched::Accept).unwrap();
        let closed = RuleSet::parse(rules, Unmatched::Reject).unwrap();
        assert_eq!(compiled(&open, "{b:int64}"), "");
        assert_eq!(compiled(&closed, "{b:int64}"), "reject(\"unmatched-schema\")");
        assert_eq!(compiled(&closed, "{a:int64}"), "");
    }

    #[test]
    fn actions_compile() {
        let rules = RuleSet::parse(
            [
                ("all(has <a:int64>, has <b:string>)", "trim b"),
                ("any(has <c:float64>, has <d:bool>)", "extract"),
                ("is <{e:int64}>", "log(\"odd\")"),
                ("has <f:int64>", "convert put f := f * 2 | rename g:=f"),
                ("has <g:int64>", "drop"),
            ],
            Unmatched::Accept,
        )
        .unwrap();
        assert_eq!(compiled(&rules, "{a:int64,b:string,z:int64}"), "cut a,z");
        assert_eq!(compiled(&rules, "{c:float64,x:int64,event_ts:time}"), "cut c,event_ts");
        assert_eq!(compiled(&rules, "{e:int64}"), "log(\"odd\") | where false");
        assert_eq!(compiled(&rules, "{f:int64}"), "put f:=f * 2 | rename g:=f");
        assert_eq!(compiled(&rules, "{g:int64}"), "where false");
    }

    #[test]
    fn null_fields_match_any_type() {
        let rules = paper_table();
        assert_eq!(compiled(&rules, "{watt:null,unit:string}"), "cut watt");
    }

    #[test]
    fn rule_errors() {
        assert_eq!(
            RuleSet::parse([("*", "reject"), ("has <a:int64>", "extract")], Unmatched::Accept),
            Err(RuleError::WildcardNotLast)
        );
        assert!(Match::parse("has <a>").is_err());
        assert!(Match::parse("maybe").is_err());
        assert!(Action::parse("explode").is_err());
        assert!(Action::parse("convert avg(x)").is_err());
        assert!(Action::parse("extract now").is_err());
    }
}
