use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use crate::record::{cast_value, Record, Value};

use super::{AggFn, AggSpec, BinOp, Expr, Pipeline, Stage};

/// A record dropped by a stage, with the reason it was dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub reason: String,
    pub stage: usize,
    pub record: Record,
}

/// Per-evaluation side channel: rejection counts by reason, the rejected
/// records themselves, and records copied out by `log(...)` stages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rejected: BTreeMap<String, u64>,
    pub rejects: Vec<Rejected>,
    pub logged: Vec<(String, Record)>,
}

impl EvalReport {
    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }

    pub fn merge(&mut self, other: EvalReport) {
        for (k, v) in other.rejected {
            *self.rejected.entry(k).or_default() += v;
        }
        self.rejects.extend(other.rejects);
        self.logged.extend(other.logged);
    }

    fn reject(&mut self, stage: usize, reason: impl Into<String>, record: Record) {
        let reason = reason.into();
        *self.rejected.entry(reason.clone()).or_default() += 1;
        self.rejects.push(Rejected {
            reason,
            stage,
            record,
        });
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Output {
    pub records: Vec<Record>,
    pub report: EvalReport,
}

pub(crate) const MISSING_FIELD: &str = "missing-field";
pub(crate) const TYPE_ERROR: &str = "type-error";
pub(crate) const RENAME_CONFLICT: &str = "rename-conflict";
pub(crate) const SHAPE: &str = "shape";

/// Running state for [`Pipeline::eval_batch`]: remaining `head` budget and
/// aggregate accumulators. Belongs to exactly one pipeline.
#[derive(Debug, Clone)]
pub struct EvalState {
    stages: Vec<StageState>,
}

#[derive(Debug, Clone)]
enum StageState {
    Stateless,
    Head { remaining: usize },
    Agg(AggTable),
}

impl EvalState {
    pub fn new(p: &Pipeline) -> Self {
        let stages = p
            .stages()
            .iter()
            .map(|s| match s {
                Stage::Head(n) => StageState::Head { remaining: *n },
                Stage::Aggregate { aggs, by } => StageState::Agg(AggTable::new(aggs.clone(), by.clone())),
                _ => StageState::Stateless,
            })
            .collect();
        EvalState { stages }
    }
}

impl Pipeline {
    /// Evaluates the whole input as one batch.
    pub fn eval<I: IntoIterator<Item = Record>>(&self, input: I) -> Output {
        let mut state = EvalState::new(self);
        self.eval_batch(input.into_iter().collect(), &mut state)
    }

    /// Evaluates one batch, carrying `head` and aggregate state over from
    /// earlier batches. Aggregates emit one refreshed record for every group
    /// that received input in this batch.
    pub fn eval_batch(&self, batch: Vec<Record>, state: &mut EvalState) -> Output {
        assert_eq!(
            state.stages.len(),
            self.stages().len(),
            "evaluation state belongs to another pipeline"
        );
        let mut report = EvalReport::default();
        let mut records = batch;
        for (idx, (stage, st)) in self.stages().iter().zip(state.stages.iter_mut()).enumerate() {
            if records.is_empty() {
                break;
            }
            records = apply(idx, stage, st, records, &mut report);
        }
        Output { records, report }
    }
}

fn apply(
    idx: usize,
    stage: &Stage,
    state: &mut StageState,
    input: Vec<Record>,
    report: &mut EvalReport,
) -> Vec<Record> {
    match stage {
        Stage::Where(expr) => input
            .into_iter()
            .filter_map(|r| match eval_expr(expr, &r) {
                Ok(Value::Bool(true)) => Some(r),
                Ok(Value::Bool(false) | Value::Null) | Err(ExprError::Missing(_)) => None,
                Ok(_) | Err(ExprError::Type(_)) => {
                    report.reject(idx, TYPE_ERROR, r);
                    None
                }
            })
            .collect(),
        Stage::Head(_) => {
            let StageState::Head { remaining } = state else {
                unreachable!()
            };
            let take = (*remaining).min(input.len());
            *remaining -= take;
            input.into_iter().take(take).collect()
        }
        Stage::Sort { field, descending } => {
            let mut recs = input;
            recs.sort_by(|a, b| {
                match (sort_key(a, field), sort_key(b, field)) {
                    (Some(x), Some(y)) => {
                        let o = total_cmp(x, y);
                        if *descending {
                            o.reverse()
                        } else {
                            o
                        }
                    }
                    (Some(_), None) => Ordering::Less,
                    (None, Some(_)) => Ordering::Greater,
                    (None, None) => Ordering::Equal,
                }
            });
            recs
        }
        Stage::Cut(fields) => input
            .into_iter()
            .filter_map(|r| {
                let mut out = Vec::with_capacity(fields.len());
                for f in fields {
                    match r.get(f) {
                        Some(v) => out.push((f.clone(), v.clone())),
                        None => {
                            report.reject(idx, MISSING_FIELD, r);
                            return None;
                        }
                    }
                }
                Some(Record::from_fields(out).expect("cut fields are distinct"))
            })
            .collect(),
        Stage::Rename(pairs) => input
            .into_iter()
            .filter_map(|mut r| {
                for (new, old) in pairs {
                    if new == old || !r.contains(old) {
                        continue;
                    }
                    if r.contains(new) {
                        report.reject(idx, RENAME_CONFLICT, r);
                        return None;
                    }
                    if crate::record::Record::from_fields([(new.as_str(), r.get(old).cloned().unwrap())]).is_err() {
                        report.reject(idx, TYPE_ERROR, r);
                        return None;
                    }
                    r.rename(old, new);
                }
                Some(r)
            })
            .collect(),
        Stage::Put { field, expr } => input
            .into_iter()
            .filter_map(|mut r| match eval_expr(expr, &r) {
                Ok(v) => {
                    if Record::from_fields([(field.as_str(), v.clone())]).is_err() {
                        report.reject(idx, TYPE_ERROR, r);
                        return None;
                    }
                    r.set(field, v);
                    Some(r)
                }
                Err(ExprError::Missing(_)) => {
                    report.reject(idx, MISSING_FIELD, r);
                    None
                }
                Err(ExprError::Type(_)) => {
                    report.reject(idx, TYPE_ERROR, r);
                    None
                }
            })
            .collect(),
        Stage::Shape(spec) => input
            .into_iter()
            .filter_map(|mut r| {
                for (f, ty) in &spec.fields {
                    let Some(v) = r.get(f) else { continue };
                    match cast_value(v, ty) {
                        Ok(nv) if Record::from_fields([(f.as_str(), nv.clone())]).is_ok() => r.set(f, nv),
                        _ => {
                            report.reject(idx, SHAPE, r);
                            return None;
                        }
                    }
                }
                Some(r)
            })
            .collect(),
        Stage::Aggregate { .. } => {
            let StageState::Agg(table) = state else {
                unreachable!()
            };
            table.push(idx, input, report)
        }
        Stage::Log(label) => {
            report
                .logged
                .extend(input.iter().map(|r| (label.clone(), r.clone())));
            input
        }
        Stage::Reject(reason) => {
            for r in input {
                report.reject(idx, reason.clone(), r);
            }
            Vec::new()
        }
    }
}

fn sort_key<'a>(r: &'a Record, field: &str) -> Option<&'a Value> {
    r.get(field).filter(|v| !v.is_null())
}

fn type_rank(v: &Value) -> u8 {
    match v {
        Value::Null => 0,
        Value::Bool(_) => 1,
        Value::Int(_) | Value::Float(_) => 2,
        Value::Str(_) => 3,
        Value::Time(_) => 4,
        Value::Array(_) => 5,
        Value::Record(_) => 6,
    }
}

/// Total order used by `sort`: by type rank, then by value. Ints and floats
/// compare numerically.
fn total_cmp(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => {
            a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap())
        }
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        (Value::Time(x), Value::Time(y)) => x.cmp(y),
        _ => match type_rank(a).cmp(&type_rank(b)) {
            Ordering::Equal => a.to_string().cmp(&b.to_string()),
            o => o,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ExprError {
    Missing(String),
    Type(String),
}

pub(crate) fn eval_expr(e: &Expr, r: &Record) -> Result<Value, ExprError> {
    match e {
        Expr::Field(f) => r.get(f).cloned().ok_or_else(|| ExprError::Missing(f.clone())),
        Expr::Lit(v) => Ok(v.clone()),
        Expr::HasField(f) => Ok(Value::Bool(r.contains(f))),
        Expr::HasType { field, ty } => Ok(Value::Bool(match r.get(field) {
            Some(Value::Null) => true,
            Some(v) => &v.ty() == ty,
            None => false,
        })),
        Expr::Binary { op: BinOp::And, lhs, rhs } => {
            let l = eval_expr(lhs, r)?;
            if l == Value::Bool(false) {
                return Ok(l);
            }
            let rv = eval_expr(rhs, r)?;
            logic(BinOp::And, &l, &rv)
        }
        Expr::Binary { op: BinOp::Or, lhs, rhs } => {
            let l = eval_expr(lhs, r)?;
            if l == Value::Bool(true) {
                return Ok(l);
            }
            let rv = eval_expr(rhs, r)?;
            logic(BinOp::Or, &l, &rv)
        }
        Expr::Binary { op, lhs, rhs } => {
            let l = eval_expr(lhs, r)?;
            let rv = eval_expr(rhs, r)?;
            match op {
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => arith(*op, &l, &rv),
                _ => compare(*op, &l, &rv),
            }
        }
    }
}

fn type_err(op: BinOp, a: &Value, b: &Value) -> ExprError {
    ExprError::Type(format!("{} {} {}", a.ty(), op.symbol(), b.ty()))
}

fn logic(op: BinOp, a: &Value, b: &Value) -> Result<Value, ExprError> {
    let as_bool = |v: &Value| match v {
        Value::Bool(x) => Ok(Some(*x)),
        Value::Null => Ok(None),
        _ => Err(type_err(op, a, b)),
    };
    let (x, y) = (as_bool(a)?, as_bool(b)?);
    Ok(match (op, x, y) {
        (BinOp::And, Some(false), _) | (BinOp::And, _, Some(false)) => Value::Bool(false),
        (BinOp::And, Some(true), Some(true)) => Value::Bool(true),
        (BinOp::Or, Some(true), _) | (BinOp::Or, _, Some(true)) => Value::Bool(true),
        (BinOp::Or, Some(false), Some(false)) => Value::Bool(false),
        _ => Value::Null,
    })
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        Value::Float(x)
    } else {
        Value::Null
    }
}

fn arith(op: BinOp, a: &Value, b: &Value) -> Result<Value, ExprError> {
    if a.is_null() || b.is_null() {
        return Ok(Value::Null);
    }
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Ok(match op {
            BinOp::Add => x.checked_add(*y),
            BinOp::Sub => x.checked_sub(*y),
            BinOp::Mul => x.checked_mul(*y),
            BinOp::Div => x.checked_div(*y),
            _ => unreachable!(),
        }
        .map_or(Value::Null, Value::Int)),
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => {
            let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            Ok(match op {
                BinOp::Add => finite(x + y),
                BinOp::Sub => finite(x - y),
                BinOp::Mul => finite(x * y),
                BinOp::Div if y == 0.0 => Value::Null,
                BinOp::Div => finite(x / y),
                _ => unreachable!(),
            })
        }
        (Value::Str(x), Value::Str(y)) if op == BinOp::Add => Ok(Value::Str(format!("{x}{y}"))),
        _ => Err(type_err(op, a, b)),
    }
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => a.as_f64() == b.as_f64(),
        _ => a == b,
    }
}

fn partial_order(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => {
            a.as_f64().unwrap().partial_cmp(&b.as_f64().unwrap())
        }
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        (Value::Time(x), Value::Time(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

fn compare(op: BinOp, a: &Value, b: &Value) -> Result<Value, ExprError> {
    if a.is_null() || b.is_null() {
        return Ok(match op {
            BinOp::Eq => Value::Bool(a.is_null() && b.is_null()),
            BinOp::Ne => Value::Bool(!(a.is_null() && b.is_null())),
            _ => Value::Null,
        });
    }
    match op {
        BinOp::Eq => Ok(Value::Bool(values_equal(a, b))),
        BinOp::Ne => Ok(Value::Bool(!values_equal(a, b))),
        _ => {
            let o = partial_order(a, b).ok_or_else(|| type_err(op, a, b))?;
            Ok(Value::Bool(match op {
                BinOp::Lt => o == Ordering::Less,
                BinOp::Le => o != Ordering::Greater,
                BinOp::Gt => o == Ordering::Greater,
                BinOp::Ge => o != Ordering::Less,
                _ => unreachable!(),
            }))
        }
    }
}

#[derive(Debug, Clone)]
struct AggTable {
    specs: Vec<AggSpec>,
    by: Vec<String>,
    groups: Vec<Group>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone)]
struct Group {
    key: Vec<Value>,
    accs: Vec<Acc>,
}

#[derive(Debug, Clone)]
enum Acc {
    Count(u64),
    Sum {
        n: u64,
        int: Option<i64>,
        float: f64,
        any_float: bool,
    },
    Avg {
        n: u64,
        sum: f64,
    },
    Extreme {
        max: bool,
        best: Option<Value>,
        any_float: bool,
    },
}

impl Acc {
    fn new(func: AggFn) -> Acc {
        match func {
            AggFn::Count => Acc::Count(0),
            AggFn::Sum => Acc::Sum {
                n: 0,
                int: Some(0),
                float: 0.0,
                any_float: false,
            },
            AggFn::Avg => Acc::Avg { n: 0, sum: 0.0 },
            AggFn::Min | AggFn::Max => Acc::Extreme {
                max: func == AggFn::Max,
                best: None,
                any_float: false,
            },
        }
    }

    /// Checks that `v` can be folded in without changing state.
    fn accepts(&self, v: &Value) -> bool {
        match self {
            Acc::Count(_) => true,
            Acc::Sum { .. } | Acc::Avg { .. } => v.as_f64().is_some(),
            Acc::Extreme { best, .. } => {
                let kind = |x: &Value| match x {
                    Value::Int(_) | Value::Float(_) => Some(0),
                    Value::Str(_) => Some(1),
                    Value::Time(_) => Some(2),
                    _ => None,
                };
                match (kind(v), best) {
                    (None, _) => false,
                    (Some(_), None) => true,
                    (Some(k), Some(b)) => kind(b) == Some(k),
                }
            }
        }
    }

    fn fold(&mut self, v: Option<&Value>) {
        match self {
            Acc::Count(n) => *n += 1,
            Acc::Sum {
                n,
                int,
                float,
                any_float,
            } => {
                let Some(v) = v else { return };
                *n += 1;
                *float += v.as_f64().unwrap();
                match v {
                    Value::Int(i) => *int = int.and_then(|s| s.checked_add(*i)),
                    _ => *any_float = true,
                }
            }
            Acc::Avg { n, sum } => {
                let Some(v) = v else { return };
                *n += 1;
                *sum += v.as_f64().unwrap();
            }
            Acc::Extreme {
                max,
                best,
                any_float,
            } => {
                let Some(v) = v else { return };
                if matches!(v, Value::Float(_)) {
                    *any_float = true;
                }
                let replace = match best {
                    None => true,
                    Some(b) => {
                        let o = partial_order(v, b).unwrap_or(Ordering::Equal);
                        if *max {
                            o == Ordering::Greater
                        } else {
                            o == Ordering::Less
                        }
                    }
                };
                if replace {
                    *best = Some(v.clone());
                }
            }
        }
    }

    fn value(&self) -> Value {
        match self {
            Acc::Count(n) => Value::Int(*n as i64),
            Acc::Sum { n: 0, .. } => Value::Null,
            Acc::Sum {
                int: Some(i),
                any_float: false,
                ..
            } => Value::Int(*i),
            Acc::Sum { float, .. } => finite(*float),
            Acc::Avg { n: 0, .. } => Value::Null,
            Acc::Avg { n, sum } => finite(sum / *n as f64),
            Acc::Extreme {
                best: Some(Value::Int(i)),
                any_float: true,
                ..
            } => Value::Float(*i as f64),
            Acc::Extreme { best, .. } => best.clone().unwrap_or(Value::Null),
        }
    }
}

impl AggTable {
    fn new(specs: Vec<AggSpec>, by: Vec<String>) -> Self {
        AggTable {
            specs,
            by,
            groups: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn push(&mut self, idx: usize, input: Vec<Record>, report: &mut EvalReport) -> Vec<Record> {
        let mut touched = Vec::new();
        for r in input {
            let key: Vec<Value> = self
                .by
                .iter()
                .map(|f| r.get(f).cloned().unwrap_or(Value::Null))
                .collect();
            let key_str = format!("{key:?}");
            let gi = match self.index.get(&key_str) {
                Some(&gi) => gi,
                None => {
                    let gi = self.groups.len();
                    self.groups.push(Group {
                        key,
                        accs: self.specs.iter().map(|s| Acc::new(s.func)).collect(),
                    });
                    self.index.insert(key_str, gi);
                    gi
                }
            };
            let group = &mut self.groups[gi];
            let inputs: Vec<Option<&Value>> = self
                .specs
                .iter()
                .map(|s| s.input.as_ref().and_then(|f| r.get(f)).filter(|v| !v.is_null()))
                .collect();
            let ok = group
                .accs
                .iter()
                .zip(&inputs)
                .all(|(acc, v)| v.is_none_or(|v| acc.accepts(v)));
            if !ok {
                report.reject(idx, TYPE_ERROR, r);
                continue;
            }
            for (acc, v) in group.accs.iter_mut().zip(&inputs) {
                acc.fold(*v);
            }
            if !touched.contains(&gi) {
                touched.push(gi);
            }
        }
        touched.sort_unstable();
        touched
            .into_iter()
            .map(|gi| {
                let g = &self.groups[gi];
                let fields = self
                    .by
                    .iter()
                    .cloned()
                    .zip(g.key.iter().cloned())
                    .chain(
                        self.specs
                            .iter()
                            .map(|s| s.output.clone())
                            .zip(g.accs.iter().map(Acc::value)),
                    );
                Record::from_fields(fields).unwrap_or_default()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::parse_pipeline;
    use crate::record::parse_text;

    fn recs(lines: &[&str]) -> Vec<Record> {
        lines.iter().map(|l| parse_text(l).unwrap()).collect()
    }

    fn run(p: &str, input: &[&str]) -> Vec<String> {
        parse_pipeline(p)
            .unwrap()
            .eval(recs(input))
            .records
            .iter()
            .map(|r| r.to_string())
            .collect()
    }

    #[test]
    fn carbon_footprint_records() {
        let input = [
            "{watt:\"80\",from:\"biolab\",event_ts:2024-01-01T00:00:01Z,ts:2024-01-01T00:00:02Z}",
            "{watt:null,from:\"office\",event_ts:2024-01-01T00:00:03Z,ts:2024-01-01T00:00:04Z}",
            "{power:120.,unit:\"watt\",from:\"lounge\",event_ts:2024-01-01T00:00:05Z,ts:2024-01-01T00:00:06Z}",
        ];
        let out = run(
            "rename watt:=power | shape(this, <{watt:float64}>) | cut watt,event_ts,from",
            &input,
        );
        assert_eq!(
            out,
            [
                "{watt:80.,event_ts:2024-01-01T00:00:01Z,from:\"biolab\"}",
                "{watt:null,event_ts:2024-01-01T00:00:03Z,from:\"office\"}",
                "{watt:120.,event_ts:2024-01-01T00:00:05Z,from:\"lounge\"}",
            ]
        );
    }

    #[test]
    fn identity_passes_through() {
        let input = ["{a:1}", "{b:\"x\"}", "{}"];
        assert_eq!(run("", &input), input);
    }

    #[test]
    fn average_of_occupancy() {
        assert_eq!(run("avg(occupancy)", &["{occupancy:0.5}", "{occupancy:1.0}"]), ["{avg:0.75}"]);
    }

    #[test]
    fn running_aggregates_per_batch() {
        let p = parse_pipeline("avg(x)").unwrap();
        let mut st = EvalState::new(&p);
        let a = p.eval_batch(recs(&["{x:1}"]), &mut st);
        let b = p.eval_batch(recs(&["{x:3}"]), &mut st);
        assert_eq!(a.records[0].to_string(), "{avg:1.}");
        assert_eq!(b.records[0].to_string(), "{avg:2.}");
        // batch with nothing reaching the aggregate emits nothing
        let c = p.eval_batch(Vec::new(), &mut st);
        assert!(c.records.is_empty());
    }

    #[test]
    fn aggregate_nulls_and_promotion() {
        let input = ["{x:1}", "{x:null}", "{y:5}", "{x:2.5}"];
        assert_eq!(run("count()", &input), ["{count:4}"]);
        assert_eq!(run("sum(x)", &input), ["{sum:3.5}"]);
        assert_eq!(run("sum(x)", &["{x:1}", "{x:2}"]), ["{sum:3}"]);
        assert_eq!(run("min(x),max(x)", &input), ["{min:1.,max:2.5}"]);
        assert_eq!(run("max(x)", &["{x:1}", "{x:7}"]), ["{max:7}"]);
        assert_eq!(run("avg(x)", &["{x:null}"]), ["{avg:null}"]);
        assert!(run("avg(x)", &[]).is_empty());
    }

    #[test]
    fn aggregate_type_errors_reject_records() {
        let p = parse_pipeline("sum(x)").unwrap();
        let out = p.eval(recs(&["{x:1}", "{x:\"a\"}", "{x:2}"]));
        assert_eq!(out.records[0].to_string(), "{sum:3}");
        assert_eq!(out.report.rejected.get(TYPE_ERROR), Some(&1));
    }

    #[test]
    fn grouped_aggregates() {
        let input = ["{r:\"a\",x:1}", "{r:\"b\",x:4}", "{r:\"a\",x:3}", "{x:10}"];
        assert_eq!(
            run("avg(x),count() by r", &input),
            ["{r:\"a\",avg:2.,count:2}", "{r:\"b\",avg:4.,count:1}", "{r:null,avg:10.,count:1}"]
        );
        let p = parse_pipeline("occupancy:=max(o) by slot").unwrap();
        let mut st = EvalState::new(&p);
        let a = p.eval_batch(recs(&["{slot:1,o:0.}", "{slot:2,o:1.}"]), &mut st);
        assert_eq!(a.records.len(), 2);
        let b = p.eval_batch(recs(&["{slot:1,o:1.}"]), &mut st);
        assert_eq!(b.records.iter().map(|r| r.to_string()).collect::<Vec<_>>(), ["{slot:1,occupancy:1.}"]);
    }

    #[test]
    fn sort_is_stable_and_puts_missing_last() {
        let input = ["{k:2,i:0}", "{i:1}", "{k:1,i:2}", "{k:2,i:3}", "{k:null,i:4}", "{k:1.5,i:5}"];
        assert_eq!(
            run("sort k | cut i", &input),
            ["{i:2}", "{i:5}", "{i:0}", "{i:3}", "{i:1}", "{i:4}"]
        );
        assert_eq!(
            run("sort -r k | cut i", &input),
            ["{i:0}", "{i:3}", "{i:5}", "{i:2}", "{i:1}", "{i:4}"]
        );
    }

    #[test]
    fn head_spans_batches() {
        let p = parse_pipeline("head 3").unwrap();
        let mut st = EvalState::new(&p);
        assert_eq!(p.eval_batch(recs(&["{a:1}", "{a:2}"]), &mut st).records.len(), 2);
        assert_eq!(p.eval_batch(recs(&["{a:3}", "{a:4}"]), &mut st).records.len(), 1);
        assert_eq!(p.eval_batch(recs(&["{a:5}"]), &mut st).records.len(), 0);
    }

    #[test]
    fn cut_rejects_records_missing_fields() {
        let p = parse_pipeline("cut a,b").unwrap();
        let out = p.eval(recs(&["{b:1,a:2,c:3}", "{a:1}"]));
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].to_string(), "{a:2,b:1}");
        assert_eq!(out.report.rejected.get(MISSING_FIELD), Some(&1));
    }

    #[test]
    fn rename_conflicts_and_missing_sources() {
        let p = parse_pipeline("rename watt:=power").unwrap();
        let out = p.eval(recs(&["{power:1,x:2}", "{watt:3}", "{watt:1,power:2}"]));
        assert_eq!(
            out.records.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
            ["{watt:1,x:2}", "{watt:3}"]
        );
        assert_eq!(out.report.rejected.get(RENAME_CONFLICT), Some(&1));
        // renaming into a reserved timestamp field keeps the type rule
        let p = parse_pipeline("rename ts:=x").unwrap();
        assert_eq!(p.eval(recs(&["{x:1}"])).report.rejected.get(TYPE_ERROR), Some(&1));
    }

    #[test]
    fn put_and_division_by_zero() {
        assert_eq!(run("put y := x / 0", &["{x:4}"]), ["{x:4,y:null}"]);
        assert_eq!(run("put y := x / 0.", &["{x:4}"]), ["{x:4,y:null}"]);
        assert_eq!(run("put y := x * 2 + 1", &["{x:4}"]), ["{x:4,y:9}"]);
        assert_eq!(run("put x := x * 0.5", &["{x:4}"]), ["{x:2.}"]);
        let p = parse_pipeline("put y := x + 1").unwrap();
        let out = p.eval(recs(&["{z:1}", "{x:\"s\"}"]));
        assert!(out.records.is_empty());
        assert_eq!(out.report.rejected.get(MISSING_FIELD), Some(&1));
        assert_eq!(out.report.rejected.get(TYPE_ERROR), Some(&1));
    }

    #[test]
    fn where_semantics() {
        let input = ["{x:1}", "{x:5}", "{y:1}", "{x:\"a\"}", "{x:null}"];
        let p = parse_pipeline("where x > 2").unwrap();
        let out = p.eval(recs(&input));
        assert_eq!(out.records.len(), 1);
        // missing and null are filtered quietly; type mismatches are rejections
        assert_eq!(out.report.rejected_total(), 1);
        assert_eq!(run("where has(y) or x == 1", &input), ["{x:1}", "{y:1}"]);
        assert_eq!(run("where has(x) and x == null", &input), ["{x:null}"]);
        assert_eq!(run("where has(x:string)", &input), ["{x:\"a\"}", "{x:null}"]);
        assert_eq!(run("where x == 1.0", &input), ["{x:1}"]);
    }

    #[test]
    fn shape_keeps_field_count() {
        let p = parse_pipeline("shape(this, <{watt:float64,other:int64}>)").unwrap();
        let out = p.eval(recs(&["{watt:\"80\",x:1}", "{watt:\"watt\"}", "{x:2}"]));
        assert_eq!(
            out.records.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
            ["{watt:80.,x:1}", "{x:2}"]
        );
        assert_eq!(out.report.rejected.get(SHAPE), Some(&1));
    }

    #[test]
    fn log_and_reject_stages() {
        let p = parse_pipeline("where x > 1 | log(\"alert\")").unwrap();
        let out = p.eval(recs(&["{x:1}", "{x:2}"]));
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.report.logged.len(), 1);
        assert_eq!(out.report.logged[0].0, "alert");
        let p = parse_pipeline("reject(\"unknown\")").unwrap();
        let out = p.eval(recs(&["{x:1}", "{x:2}"]));
        assert!(out.records.is_empty());
        assert_eq!(out.report.rejected.get("unknown"), Some(&2));
    }
}
