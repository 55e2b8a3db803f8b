//! A small dataflow language for ingress flows, egress flows and queries.
//!
//! ```text
//! rename watt:=power | shape(this, <{watt:float64}>) | cut watt,event_ts,from
//! where occupancy > 0.5 | sort -r occupancy | head 3
//! avg(occupancy), count() by slot
//! ```
//!
//! Pipelines are immutable once parsed. [`Pipeline::eval`] runs one sequence
//! to completion; [`Pipeline::eval_batch`] keeps running aggregates across
//! batches for streaming use.

mod eval;
mod parse;

use std::fmt;

use crate::record::{write_string, Type, Value};

pub use eval::{EvalReport, EvalState, Output, Rejected};
pub use parse::parse_pipeline;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum FlowError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("invalid pipeline: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pipeline {
    stages: Vec<Stage>,
}

impl Pipeline {
    pub fn identity() -> Self {
        Pipeline::default()
    }

    /// Builds a pipeline from stages, checking the structural invariants.
    pub fn new(stages: Vec<Stage>) -> Result<Self, FlowError> {
        let aggs = stages
            .iter()
            .filter(|s| matches!(s, Stage::Aggregate { .. }))
            .count();
        if aggs > 1 {
            return Err(FlowError::Invalid("at most one aggregate stage per pipeline".into()));
        }
        for stage in &stages {
            stage.validate()?;
        }
        Ok(Pipeline { stages })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn is_identity(&self) -> bool {
        self.stages.is_empty()
    }

    /// No stage keeps state between records.
    pub fn is_stateless(&self) -> bool {
        self.stages
            .iter()
            .all(|s| !matches!(s, Stage::Aggregate { .. } | Stage::Head(_) | Stage::Sort { .. }))
    }

    pub fn has_aggregate(&self) -> bool {
        self.stages.iter().any(|s| matches!(s, Stage::Aggregate { .. }))
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Pipeline) -> Result<Pipeline, FlowError> {
        let mut stages = self.stages.clone();
        stages.extend(next.stages.iter().cloned());
        Pipeline::new(stages)
    }

    /// Number of dataflow operators; each aggregate function counts once.
    pub fn operator_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Aggregate { aggs, .. } => aggs.len(),
                _ => 1,
            })
            .sum()
    }
}

/// Query complexity: dataflow operators plus data subjects, where each
/// `name@egress` target contributes two subjects.
pub fn qcx<S: AsRef<str>>(targets: &[S], pipeline: &Pipeline) -> usize {
    pipeline.operator_count() + 2 * targets.len()
}

impl std::str::FromStr for Pipeline {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pipeline(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Where(Expr),
    Head(usize),
    Sort { field: String, descending: bool },
    Cut(Vec<String>),
    /// `(new, old)` pairs.
    Rename(Vec<(String, String)>),
    Put { field: String, expr: Expr },
    Shape(TypeSpec),
    Aggregate { aggs: Vec<AggSpec>, by: Vec<String> },
    Log(String),
    /// Rejects every record with the given reason.
    Reject(String),
}

impl Stage {
    fn validate(&self) -> Result<(), FlowError> {
        match self {
            Stage::Head(0) => Err(FlowError::Invalid("head count must be positive".into())),
            Stage::Cut(fields) if fields.is_empty() => {
                Err(FlowError::Invalid("cut needs at least one field".into()))
            }
            Stage::Cut(fields) => no_dups(fields.iter(), "cut field"),
            Stage::Rename(pairs) if pairs.is_empty() => {
                Err(FlowError::Invalid("rename needs at least one pair".into()))
            }
            Stage::Rename(pairs) => no_dups(pairs.iter().map(|(n, _)| n), "rename target"),
            Stage::Shape(spec) => no_dups(spec.fields.iter().map(|(n, _)| n), "shape field"),
            Stage::Aggregate { aggs, by } => {
                if aggs.is_empty() {
                    return Err(FlowError::Invalid("aggregate needs a function".into()));
                }
                no_dups(
                    aggs.iter().map(|a| &a.output).chain(by.iter()),
                    "aggregate output",
                )
            }
            _ => Ok(()),
        }
    }
}

fn no_dups<'a>(names: impl Iterator<Item = &'a String>, what: &str) -> Result<(), FlowError> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(FlowError::Invalid(format!("duplicate {what} `{n}`")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFn {
    Avg,
    Sum,
    Count,
    Min,
    Max,
}

impl AggFn {
    pub fn name(self) -> &'static str {
        match self {
            AggFn::Avg => "avg",
            AggFn::Sum => "sum",
            AggFn::Count => "count",
            AggFn::Min => "min",
            AggFn::Max => "max",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "avg" => AggFn::Avg,
            "sum" => AggFn::Sum,
            "count" => AggFn::Count,
            "min" => AggFn::Min,
            "max" => AggFn::Max,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggSpec {
    pub output: String,
    pub func: AggFn,
    /// `None` only for `count()`.
    pub input: Option<String>,
}

impl AggSpec {
    pub fn new(func: AggFn, input: Option<&str>) -> Self {
        AggSpec {
            output: func.name().to_string(),
            func,
            input: input.map(str::to_string),
        }
    }
}

/// `<{field:type,...}>`
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TypeSpec {
    pub fields: Vec<(String, Type)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Field(String),
    Lit(Value),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    HasType { field: String, ty: Type },
    HasField(String),
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            _ => u8::MAX,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Field(name) => f.write_str(name),
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::HasField(name) => write!(f, "has({name})"),
            Expr::HasType { field, ty } => write!(f, "has({field}:{ty})"),
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                if lhs.precedence() < p {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs.precedence() <= p {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
        }
    }
}

impl fmt::Display for TypeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<{")?;
        for (i, (name, ty)) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{name}:{ty}")?;
        }
        f.write_str("}>")
    }
}

impl fmt::Display for AggSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.output != self.func.name() {
            write!(f, "{}:=", self.output)?;
        }
        write!(f, "{}({})", self.func.name(), self.input.as_deref().unwrap_or(""))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Where(e) => write!(f, "where {e}"),
            Stage::Head(n) => write!(f, "head {n}"),
            Stage::Sort { field, descending } => {
                write!(f, "sort {}{field}", if *descending { "-r " } else { "" })
            }
            Stage::Cut(fields) => write!(f, "cut {}", fields.join(",")),
            Stage::Rename(pairs) => {
                f.write_str("rename ")?;
                for (i, (new, old)) in pairs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{new}:={old}")?;
                }
                Ok(())
            }
            Stage::Put { field, expr } => write!(f, "put {field}:={expr}"),
            Stage::Shape(spec) => write!(f, "shape(this, {spec})"),
            Stage::Aggregate { aggs, by } => {
                for (i, a) in aggs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                if !by.is_empty() {
                    write!(f, " by {}", by.join(","))?;
                }
                Ok(())
            }
            Stage::Log(label) => {
                f.write_str("log(")?;
                write_string(f, label)?;
                f.write_str(")")
            }
            Stage::Reject(reason) => {
                f.write_str("reject(")?;
                write_string(f, reason)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Pipeline {
        parse_pipeline(s).unwrap()
    }

    #[test]
    fn qcx_counts_operators_and_subjects() {
        assert_eq!(qcx(&["BioHall@occupancy"], &p("avg(occupancy)")), 3);
        assert_eq!(qcx::<&str>(&[], &Pipeline::identity()), 0);
        assert_eq!(qcx(&["A@e1", "B@e2"], &p("sort f | head")), 6);
        assert_eq!(qcx(&["A@e"], &p("avg(x), count() by y | head")), 5);
    }

    #[test]
    fn structural_invariants() {
        assert!(parse_pipeline("count() | count()").is_err());
        assert!(parse_pipeline("rename a:=b, a:=c").is_err());
        assert!(parse_pipeline("head 0").is_err());
        assert!(parse_pipeline("shape(this, <{a:int64,a:string}>)").is_err());
        assert!(parse_pipeline("avg(x) by avg").is_err());
        assert!(p("avg(x)").has_aggregate());
        assert!(p("where x > 1 | cut x").is_stateless());
        assert!(!p("sort x").is_stateless());
    }

    #[test]
    fn then_concatenates() {
        let a = p("rename watt:=power");
        let b = p("cut watt");
        assert_eq!(a.then(&b).unwrap(), p("rename watt:=power | cut watt"));
        assert!(p("count()").then(&p("sum(x)")).is_err());
    }
}
