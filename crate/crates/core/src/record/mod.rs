//! Self-describing typed records.
//!
//! A [`Record`] is an ordered map of field names to [`Value`]s. Its [`Schema`]
//! is derived from the values themselves, so records with different shapes can
//! share a stream, a branch or a pipeline without any registry.

mod cast;
mod text;
mod time;

use std::fmt;

pub use cast::{cast_value, CastError};
pub use text::{is_identifier, parse_lines, parse_schema, parse_text, to_lines};
pub(crate) use text::{write_string, Scanner};
pub use time::Timestamp;

/// Processing timestamp, stamped by the router that loads the record.
pub const TS: &str = "ts";
/// Generation timestamp, set once at the first hop.
pub const EVENT_TS: &str = "event_ts";
/// Lineage of `source@egress` labels.
pub const FROM: &str = "from";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("type conflict at {pos}: {msg}")]
    TypeConflict { pos: usize, msg: String },
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("field `{field}` must be a timestamp, found {found}")]
    ReservedType { field: String, found: Type },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Time(Timestamp),
    Array(Vec<Value>),
    Record(Record),
}

impl Value {
    pub fn ty(&self) -> Type {
        match self {
            Value::Null => Type::Null,
            Value::Bool(_) => Type::Bool,
            Value::Int(_) => Type::Int64,
            Value::Float(_) => Type::Float64,
            Value::Str(_) => Type::String,
            Value::Time(_) => Type::Time,
            Value::Array(items) => {
                let elem = items
                    .iter()
                    .find(|v| !v.is_null())
                    .map(Value::ty)
                    .unwrap_or(Type::Null);
                Type::Array(Box::new(elem))
            }
            Value::Record(r) => Type::Record(r.schema().fields),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_time(&self) -> Option<Timestamp> {
        match self {
            Value::Time(t) => Some(*t),
            _ => None,
        }
    }

    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<Timestamp> for Value {
    fn from(v: Timestamp) -> Self {
        Value::Time(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_value(f, self)
    }
}

/// Type descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Type {
    Null,
    Bool,
    Int64,
    Float64,
    String,
    Time,
    Array(Box<Type>),
    Record(Vec<(String, Type)>),
}

impl Type {
    /// Parses the scalar type names accepted in type specs.
    pub fn from_name(name: &str) -> Option<Type> {
        Some(match name {
            "int64" => Type::Int64,
            "float64" => Type::Float64,
            "string" => Type::String,
            "bool" => Type::Bool,
            "time" => Type::Time,
            "null" => Type::Null,
            _ => return None,
        })
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Null => f.write_str("null"),
            Type::Bool => f.write_str("bool"),
            Type::Int64 => f.write_str("int64"),
            Type::Float64 => f.write_str("float64"),
            Type::String => f.write_str("string"),
            Type::Time => f.write_str("time"),
            Type::Array(elem) => write!(f, "[{elem}]"),
            Type::Record(fields) => {
                f.write_str("{")?;
                for (i, (name, ty)) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{name}:{ty}")?;
                }
                f.write_str("}")
            }
        }
    }
}

/// Ordered field names and types of a record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Schema {
    pub fields: Vec<(String, Type)>,
}

impl Schema {
    /// `{name:type,...}` with nested types spelled out; the identity of a schema.
    pub fn canonical(&self) -> String {
        Type::Record(self.fields.clone()).to_string()
    }

    /// FNV-1a over the canonical string. Stable across processes and builds.
    pub fn fingerprint(&self) -> u64 {
        fingerprint_str(&self.canonical())
    }

    pub fn field(&self, name: &str) -> Option<&Type> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn has_field(&self, name: &str) -> bool {
        self.field(name).is_some()
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

pub fn fingerprint_str(canonical: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    canonical
        .bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// A typed record: unique field names in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Record {
    fields: Vec<(String, Value)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a record, rejecting duplicate names and non-time `ts`/`event_ts`.
    pub fn from_fields<I, K>(fields: I) -> Result<Self, RecordError>
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        let mut rec = Record::new();
        for (name, value) in fields {
            let name = name.into();
            if rec.contains(&name) {
                return Err(RecordError::DuplicateField(name));
            }
            check_reserved(&name, &value)?;
            rec.fields.push((name, value));
        }
        Ok(rec)
    }

    /// Convenience for tests and literals. Panics on invalid input.
    pub fn of<const N: usize>(fields: [(&str, Value); N]) -> Self {
        Self::from_fields(fields).expect("valid record literal")
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fields.iter().any(|(n, _)| n == name)
    }

    /// Replaces the value in place, or appends a new field.
    pub fn set(&mut self, name: &str, value: Value) {
        match self.fields.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => *v = value,
            None => self.fields.push((name.to_string(), value)),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        let idx = self.fields.iter().position(|(n, _)| n == name)?;
        Some(self.fields.remove(idx).1)
    }

    /// Renames `from` to `to` keeping its position. No-op when `from` is absent.
    pub(crate) fn rename(&mut self, from: &str, to: &str) {
        if let Some((n, _)) = self.fields.iter_mut().find(|(n, _)| n == from) {
            *n = to.to_string();
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.fields.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(n, _)| n.as_str())
    }

    pub fn into_fields(self) -> Vec<(String, Value)> {
        self.fields
    }

    pub fn schema(&self) -> Schema {
        Schema {
            fields: self
                .fields
                .iter()
                .map(|(n, v)| (n.clone(), v.ty()))
                .collect(),
        }
    }

    pub fn ts(&self) -> Option<Timestamp> {
        self.get(TS).and_then(Value::as_time)
    }

    pub fn event_ts(&self) -> Option<Timestamp> {
        self.get(EVENT_TS).and_then(Value::as_time)
    }

    /// Checks the record-level invariants (unique names, reserved field types).
    pub fn validate(&self) -> Result<(), RecordError> {
        for (i, (name, value)) in self.fields.iter().enumerate() {
            if self.fields[..i].iter().any(|(n, _)| n == name) {
                return Err(RecordError::DuplicateField(name.clone()));
            }
            check_reserved(name, value)?;
        }
        Ok(())
    }
}

fn check_reserved(name: &str, value: &Value) -> Result<(), RecordError> {
    if (name == TS || name == EVENT_TS) && !matches!(value, Value::Time(_) | Value::Null) {
        return Err(RecordError::ReservedType {
            field: name.to_string(),
            found: value.ty(),
        });
    }
    Ok(())
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_record(f, self)
    }
}

impl std::str::FromStr for Record {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_text(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprints_follow_canonical_strings() {
        let a = parse_text("{a:1,b:\"x\"}").unwrap().schema();
        let b = parse_text("{a:7,b:\"y\"}").unwrap().schema();
        let c = parse_text("{a:1.,b:\"x\"}").unwrap().schema();
        let d = parse_text("{b:\"x\",a:1}").unwrap().schema();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_ne!(a.fingerprint(), d.fingerprint());
        assert_eq!(a.canonical(), "{a:int64,b:string}");
        assert_eq!(d.canonical(), "{b:string,a:int64}");
    }

    #[test]
    fn fingerprint_is_fixed_across_builds() {
        // FNV-1a of "{a:int64}" computed by hand.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in "{a:int64}".bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let s = parse_text("{a:1}").unwrap().schema();
        assert_eq!(s.fingerprint(), h);
    }

    #[test]
    fn reserved_fields_must_be_time() {
        let err = Record::from_fields([("ts", Value::Int(1))]).unwrap_err();
        assert!(matches!(err, RecordError::ReservedType { .. }));
        assert!(parse_text("{event_ts:\"x\"}").is_err());
        assert!(parse_text("{ts:2024-01-01T00:00:00Z}").is_ok());
    }

    #[test]
    fn duplicate_fields_rejected() {
        assert_eq!(
            parse_text("{a:1,a:2}").unwrap_err(),
            RecordError::DuplicateField("a".into())
        );
    }

    #[test]
    fn set_replaces_in_place() {
        let mut r = parse_text("{a:1,b:2}").unwrap();
        r.set("a", Value::Int(5));
        r.set("c", Value::Bool(true));
        assert_eq!(r.to_string(), "{a:5,b:2,c:true}");
        r.rename("b", "z");
        assert_eq!(r.to_string(), "{a:5,z:2,c:true}");
    }
}
