use super::{text::render_float, Timestamp, Type, Value};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("cannot convert {value} to {target}")]
pub struct CastError {
    pub value: String,
    pub target: Type,
}

/// Converts `v` to `target`.
///
/// Supported conversions: int64→float64 (only when exact), numeric strings to
/// int64/float64, numbers to their decimal string, bool↔"true"/"false",
/// bool→int64/float64 as 1/0, strings↔time via RFC 3339. Null converts to
/// null for every target. A value already of the target type is returned
/// unchanged.
pub fn cast_value(v: &Value, target: &Type) -> Result<Value, CastError> {
    if v.is_null() {
        return Ok(Value::Null);
    }
    if &v.ty() == target {
        return Ok(v.clone());
    }
    let fail = || CastError {
        value: v.to_string(),
        target: target.clone(),
    };
    let out = match (v, target) {
        (Value::Int(i), Type::Float64) => {
            let f = *i as f64;
            if f as i64 != *i || (f == 9_223_372_036_854_775_808.0) {
                return Err(fail());
            }
            Value::Float(f)
        }
        (Value::Str(s), Type::Int64) => Value::Int(s.trim().parse().map_err(|_| fail())?),
        (Value::Str(s), Type::Float64) => {
            let t = s.trim();
            if !is_decimal(t) {
                return Err(fail());
            }
            let f: f64 = t.parse().map_err(|_| fail())?;
            if !f.is_finite() {
                return Err(fail());
            }
            Value::Float(f)
        }
        (Value::Int(i), Type::String) => Value::Str(i.to_string()),
        (Value::Float(f), Type::String) => Value::Str(render_float(*f)),
        (Value::Bool(b), Type::String) => Value::Str(b.to_string()),
        (Value::Str(s), Type::Bool) => match s.as_str() {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => return Err(fail()),
        },
        (Value::Bool(b), Type::Int64) => Value::Int(i64::from(*b)),
        (Value::Bool(b), Type::Float64) => Value::Float(if *b { 1.0 } else { 0.0 }),
        (Value::Str(s), Type::Time) => Value::Time(Timestamp::parse_rfc3339(s.trim()).ok_or_else(fail)?),
        (Value::Time(t), Type::String) => Value::Str(t.to_string()),
        _ => return Err(fail()),
    };
    Ok(out)
}

/// Plain decimal: optional sign, digits, optional fraction and exponent.
/// Rejects `inf`, `NaN` and similar spellings that `f64::from_str` accepts.
fn is_decimal(s: &str) -> bool {
    let s = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let (int, frac) = match mantissa.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mantissa, ""),
    };
    let digits = |x: &str| x.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() && frac.is_empty() || !digits(int) || !digits(frac) {
        return false;
    }
    match exp {
        None => true,
        Some(e) => {
            let e = e.strip_prefix(['-', '+']).unwrap_or(e);
            !e.is_empty() && digits(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_string_to_float() {
        assert_eq!(cast_value(&Value::str("80"), &Type::Float64), Ok(Value::Float(80.0)));
        assert_eq!(cast_value(&Value::str("-1.5e2"), &Type::Float64), Ok(Value::Float(-150.0)));
        assert_eq!(cast_value(&Value::str("80"), &Type::Int64), Ok(Value::Int(80)));
    }

    #[test]
    fn null_absorbs_every_cast() {
        for t in [Type::Int64, Type::Float64, Type::String, Type::Bool, Type::Time] {
            assert_eq!(cast_value(&Value::Null, &t), Ok(Value::Null));
        }
    }

    #[test]
    fn non_numeric_strings_are_unconvertible() {
        for s in ["watt", "", "inf", "NaN", "1.2.3", "0x10", "1e"] {
            assert!(cast_value(&Value::str(s), &Type::Float64).is_err(), "{s}");
        }
        assert!(cast_value(&Value::str("1.5"), &Type::Int64).is_err());
    }

    #[test]
    fn int_to_float_only_when_exact() {
        assert_eq!(cast_value(&Value::Int(3), &Type::Float64), Ok(Value::Float(3.0)));
        assert!(cast_value(&Value::Int((1 << 53) + 1), &Type::Float64).is_err());
        assert!(cast_value(&Value::Int(i64::MAX), &Type::Float64).is_err());
    }

    #[test]
    fn float_to_int_is_not_offered() {
        assert!(cast_value(&Value::Float(1.0), &Type::Int64).is_err());
    }

    #[test]
    fn strings_and_scalars() {
        assert_eq!(cast_value(&Value::Float(80.0), &Type::String), Ok(Value::str("80.")));
        assert_eq!(cast_value(&Value::Int(-4), &Type::String), Ok(Value::str("-4")));
        assert_eq!(cast_value(&Value::Bool(true), &Type::String), Ok(Value::str("true")));
        assert_eq!(cast_value(&Value::str("false"), &Type::Bool), Ok(Value::Bool(false)));
        assert!(cast_value(&Value::str("yes"), &Type::Bool).is_err());
        assert_eq!(cast_value(&Value::Bool(true), &Type::Float64), Ok(Value::Float(1.0)));
        assert_eq!(cast_value(&Value::Bool(false), &Type::Int64), Ok(Value::Int(0)));
        let t = cast_value(&Value::str("2024-01-01T00:00:00Z"), &Type::Time).unwrap();
        assert_eq!(cast_value(&t, &Type::String), Ok(Value::str("2024-01-01T00:00:00Z")));
    }

    #[test]
    fn same_type_is_identity() {
        let vals = [
            Value::Int(1),
            Value::Float(2.5),
            Value::str("x"),
            Value::Bool(false),
            Value::Time(Timestamp::from_nanos(7)),
        ];
        for v in vals {
            assert_eq!(cast_value(&v, &v.ty()).unwrap(), v);
        }
    }
}
