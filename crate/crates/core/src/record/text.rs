//! Canonical text form: one record per line.
//!
//! ```text
//! {room_energy:80,unit:"watt",event_ts:2024-03-01T05:00:00Z}
//! ```
//!
//! Floats always carry a `.` or an exponent, timestamps are bare RFC 3339
//! tokens, strings are double-quoted.

use std::fmt::{self, Write as _};

use super::{Record, RecordError, Schema, Timestamp, Type, Value};

pub fn parse_text(line: &str) -> Result<Record, RecordError> {
    let mut sc = Scanner::new(line);
    sc.skip_ws();
    let rec = sc.record()?;
    sc.skip_ws();
    if !sc.at_end() {
        return Err(sc.syntax("trailing characters after record"));
    }
    Ok(rec)
}

/// Parses a schema written `{name:type,...}`, optionally wrapped in `<...>`.
pub fn parse_schema(text: &str) -> Result<Schema, RecordError> {
    let mut sc = Scanner::new(text);
    sc.skip_ws();
    let wrapped = sc.eat("<");
    sc.skip_ws();
    let Type::Record(fields) = sc.type_desc()? else {
        return Err(RecordError::Syntax {
            pos: 0,
            msg: "expected a record type".into(),
        });
    };
    sc.skip_ws();
    if wrapped {
        sc.expect(">")?;
        sc.skip_ws();
    }
    if !sc.at_end() {
        return Err(sc.syntax("trailing characters after schema"));
    }
    Ok(Schema { fields })
}

/// Parses newline-delimited records, skipping blank lines. Error positions are
/// offsets into `text`.
pub fn parse_lines(text: &str) -> Result<Vec<Record>, RecordError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let rec = parse_text(body).map_err(|e| shift(e, offset))?;
            out.push(rec);
        }
        offset += line.len();
    }
    Ok(out)
}

fn shift(e: RecordError, by: usize) -> RecordError {
    match e {
        RecordError::Syntax { pos, msg } => RecordError::Syntax { pos: pos + by, msg },
        RecordError::TypeConflict { pos, msg } => RecordError::TypeConflict { pos: pos + by, msg },
        other => other,
    }
}

pub fn to_lines<'a>(records: impl IntoIterator<Item = &'a Record>) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{r}");
    }
    s
}

pub(crate) fn write_record(f: &mut impl fmt::Write, rec: &Record) -> fmt::Result {
    f.write_char('{')?;
    for (i, (name, value)) in rec.iter().enumerate() {
        if i > 0 {
            f.write_char(',')?;
        }
        f.write_str(name)?;
        f.write_char(':')?;
        write_value(f, value)?;
    }
    f.write_char('}')
}

pub(crate) fn write_value(f: &mut impl fmt::Write, value: &Value) -> fmt::Result {
    match value {
        Value::Null => f.write_str("null"),
        Value::Bool(b) => write!(f, "{b}"),
        Value::Int(i) => write!(f, "{i}"),
        Value::Float(x) => f.write_str(&render_float(*x)),
        Value::Str(s) => write_string(f, s),
        Value::Time(t) => write!(f, "{t}"),
        Value::Array(items) => {
            f.write_char('[')?;
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    f.write_char(',')?;
                }
                write_value(f, v)?;
            }
            f.write_char(']')
        }
        Value::Record(r) => write_record(f, r),
    }
}

/// `80.0` renders as `80.`; everything else uses the shortest round-trip form.
pub(crate) fn render_float(x: f64) -> String {
    let s = format!("{x:?}");
    match s.strip_suffix(".0") {
        Some(int) => format!("{int}."),
        None => s,
    }
}

pub(crate) fn write_string(f: &mut impl fmt::Write, s: &str) -> fmt::Result {
    f.write_char('"')?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\r' => f.write_str("\\r")?,
            '\t' => f.write_str("\\t")?,
            c if (c as u32) < 0x20 => write!(f, "\\u{:04x}", c as u32)?,
            c => f.write_char(c)?,
        }
    }
    f.write_char('"')
}

pub(crate) fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c)) && chars.all(is_ident_char)
}

/// Byte-position scanner shared by the record and pipeline parsers.
pub(crate) struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        Scanner { src, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    pub(crate) fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    pub(crate) fn peek_at(&self, n: usize) -> Option<char> {
        self.rest().chars().nth(n)
    }

    pub(crate) fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    pub(crate) fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    /// Consumes `s` if the input continues with it.
    pub(crate) fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    /// Consumes the keyword `kw` only when it is not a prefix of a longer identifier.
    pub(crate) fn eat_keyword(&mut self, kw: &str) -> bool {
        let rest = self.rest();
        if rest.starts_with(kw) && !rest[kw.len()..].starts_with(is_ident_char) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    pub(crate) fn expect(&mut self, s: &str) -> Result<(), RecordError> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{s}`")))
        }
    }

    pub(crate) fn syntax(&self, msg: &str) -> RecordError {
        RecordError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn ident(&mut self) -> Result<String, RecordError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if is_ident_start(c) => {
                self.bump();
            }
            _ => return Err(self.syntax("expected identifier")),
        }
        while matches!(self.peek(), Some(c) if is_ident_char(c)) {
            self.bump();
        }
        Ok(self.src[start..self.pos].to_string())
    }

    /// `int64`, `[T]` or `{name:T,...}`.
    pub(crate) fn type_desc(&mut self) -> Result<Type, RecordError> {
        self.skip_ws();
        if self.eat("[") {
            let elem = self.type_desc()?;
            self.skip_ws();
            self.expect("]")?;
            return Ok(Type::Array(Box::new(elem)));
        }
        if self.eat("{") {
            let mut fields: Vec<(String, Type)> = Vec::new();
            self.skip_ws();
            if self.eat("}") {
                return Ok(Type::Record(fields));
            }
            loop {
                self.skip_ws();
                let at = self.pos;
                let name = self.ident()?;
                if fields.iter().any(|(n, _)| *n == name) {
                    return Err(RecordError::DuplicateField(name));
                }
                self.skip_ws();
                self.expect(":")?;
                let ty = self.type_desc()?;
                if matches!(name.as_str(), super::TS | super::EVENT_TS) && !matches!(ty, Type::Time) {
                    self.pos = at;
                    return Err(self.syntax("`ts` and `event_ts` must be time"));
                }
                fields.push((name, ty));
                self.skip_ws();
                if self.eat("}") {
                    return Ok(Type::Record(fields));
                }
                self.expect(",")?;
            }
        }
        let at = self.pos;
        let name = self.ident()?;
        Type::from_name(&name).ok_or_else(|| {
            self.pos = at;
            self.syntax(&format!("unknown type `{name}`"))
        })
    }

    pub(crate) fn record(&mut self) -> Result<Record, RecordError> {
        self.expect("{")?;
        let mut rec = Record::new();
        self.skip_ws();
        if self.eat("}") {
            return Ok(rec);
        }
        loop {
            self.skip_ws();
            let name_pos = self.pos;
            let name = self.ident()?;
            self.skip_ws();
            self.expect(":")?;
            self.skip_ws();
            let value = self.value()?;
            if rec.contains(&name) {
                return Err(RecordError::DuplicateField(name));
            }
            super::check_reserved(&name, &value).map_err(|e| match e {
                RecordError::ReservedType { .. } => RecordError::TypeConflict {
                    pos: name_pos,
                    msg: e.to_string(),
                },
                e => e,
            })?;
            rec.set(&name, value);
            self.skip_ws();
            if self.eat(",") {
                continue;
            }
            self.expect("}")?;
            return Ok(rec);
        }
    }

    pub(crate) fn value(&mut self) -> Result<Value, RecordError> {
        match self.peek() {
            Some('{') => self.record().map(Value::Record),
            Some('[') => self.array(),
            Some('"') => self.string().map(Value::Str),
            Some(c) if c == '-' || c.is_ascii_digit() => self.number_or_time(),
            Some(_) => {
                if self.eat_keyword("true") {
                    Ok(Value::Bool(true))
                } else if self.eat_keyword("false") {
                    Ok(Value::Bool(false))
                } else if self.eat_keyword("null") {
                    Ok(Value::Null)
                } else {
                    Err(self.syntax("expected value"))
                }
            }
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn array(&mut self) -> Result<Value, RecordError> {
        self.expect("[")?;
        let mut items = Vec::new();
        self.skip_ws();
        if self.eat("]") {
            return Ok(Value::Array(items));
        }
        let mut variant: Option<std::mem::Discriminant<Value>> = None;
        loop {
            self.skip_ws();
            let at = self.pos;
            let v = self.value()?;
            if !v.is_null() {
                let d = std::mem::discriminant(&v);
                match variant {
                    None => variant = Some(d),
                    Some(prev) if prev != d => {
                        return Err(RecordError::TypeConflict {
                            pos: at,
                            msg: format!("array element of type {} differs from earlier elements", v.ty()),
                        })
                    }
                    _ => {}
                }
            }
            items.push(v);
            self.skip_ws();
            if self.eat(",") {
                continue;
            }
            self.expect("]")?;
            return Ok(Value::Array(items));
        }
    }

    pub(crate) fn string(&mut self) -> Result<String, RecordError> {
        self.expect("\"")?;
        let mut out = String::new();
        loop {
            let c = self
                .bump()
                .ok_or_else(|| self.syntax("unterminated string"))?;
            match c {
                '"' => return Ok(out),
                '\\' => {
                    let esc = self
                        .bump()
                        .ok_or_else(|| self.syntax("unterminated escape"))?;
                    match esc {
                        '"' => out.push('"'),
                        '\\' => out.push('\\'),
                        '/' => out.push('/'),
                        'n' => out.push('\n'),
                        'r' => out.push('\r'),
                        't' => out.push('\t'),
                        'u' => out.push(self.unicode_escape()?),
                        _ => return Err(self.syntax("unknown escape")),
                    }
                }
                c => out.push(c),
            }
        }
    }

    fn hex4(&mut self) -> Result<u32, RecordError> {
        let digits = self.rest().get(..4).ok_or_else(|| self.syntax("short \\u escape"))?;
        let v = u32::from_str_radix(digits, 16).map_err(|_| self.syntax("bad \\u escape"))?;
        self.pos += 4;
        Ok(v)
    }

    fn unicode_escape(&mut self) -> Result<char, RecordError> {
        let hi = self.hex4()?;
        let code = if (0xD800..0xDC00).contains(&hi) {
            self.expect("\\u")?;
            let lo = self.hex4()?;
            if !(0xDC00..0xE000).contains(&lo) {
                return Err(self.syntax("bad surrogate pair"));
            }
            0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00)
        } else {
            hi
        };
        char::from_u32(code).ok_or_else(|| self.syntax("invalid code point"))
    }

    fn looks_like_time(&self) -> bool {
        let b = self.rest().as_bytes();
        b.len() > 5 && b[..4].iter().all(u8::is_ascii_digit) && b[4] == b'-' && b[5].is_ascii_digit()
    }

    fn number_or_time(&mut self) -> Result<Value, RecordError> {
        let start = self.pos;
        if self.looks_like_time() {
            while matches!(self.peek(), Some(c) if c.is_ascii_digit() || "-:.+TZtz".contains(c)) {
                self.bump();
            }
            let tok = &self.src[start..self.pos];
            return Timestamp::parse_rfc3339(tok)
                .map(Value::Time)
                .ok_or(RecordError::Syntax {
                    pos: start,
                    msg: format!("invalid timestamp `{tok}`"),
                });
        }
        self.eat("-");
        let int_start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.bump();
        }
        if self.pos == int_start {
            return Err(self.syntax("expected digits"));
        }
        let mut is_float = false;
        if self.peek() == Some('.') {
            is_float = true;
            self.bump();
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.bump();
            if matches!(self.peek(), Some('+' | '-')) {
                self.bump();
            }
            let exp_start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.bump();
            }
            if self.pos == exp_start {
                self.pos = save;
                return Err(self.syntax("expected exponent digits"));
            }
            is_float = true;
        }
        let tok = &self.src[start..self.pos];
        if is_float {
            let x: f64 = tok.parse().map_err(|_| RecordError::Syntax {
                pos: start,
                msg: format!("invalid float `{tok}`"),
            })?;
            if !x.is_finite() {
                return Err(RecordError::Syntax {
                    pos: start,
                    msg: format!("float out of range `{tok}`"),
                });
            }
            Ok(Value::Float(x))
        } else {
            tok.parse().map(Value::Int).map_err(|_| RecordError::Syntax {
                pos: start,
                msg: format!("integer out of range `{tok}`"),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schemas_parse_back_from_canonical_form() {
        let r = parse_text("{a:1,from:[\"x\"],n:{b:2.},ts:2024-01-01T00:00:00Z}").unwrap();
        let s = r.schema();
        assert_eq!(parse_schema(&s.canonical()).unwrap(), s);
        assert_eq!(parse_schema("<{ watt : string }>").unwrap().canonical(), "{watt:string}");
        assert!(parse_schema("{a:int64,a:string}").is_err());
        assert!(parse_schema("{ts:string}").is_err());
        assert!(parse_schema("{a:nope}").is_err());
        assert!(parse_schema("int64").is_err());
    }
    use crate::record::{Record, Type};

    #[test]
    fn parses_figure_record() {
        let r = parse_text("{room_energy:80,unit:\"watt\"}").unwrap();
        assert_eq!(r.get("room_energy"), Some(&Value::Int(80)));
        assert_eq!(r.get("unit"), Some(&Value::str("watt")));
        assert_eq!(r.to_string(), "{room_energy:80,unit:\"watt\"}");
    }

    #[test]
    fn empty_record() {
        let r = parse_text("{}").unwrap();
        assert!(r.is_empty());
        assert!(r.schema().fields.is_empty());
        assert_eq!(r.to_string(), "{}");
    }

    #[test]
    fn trailing_dot_float() {
        let r = parse_text("{power:120.,unit:\"watt\"}").unwrap();
        assert_eq!(r.get("power"), Some(&Value::Float(120.0)));
        let r2 = parse_text("{power:120.0,unit:\"watt\"}").unwrap();
        assert_eq!(r, r2);
        assert_eq!(r2.to_string(), "{power:120.,unit:\"watt\"}");
    }

    #[test]
    fn canonical_float_rendering() {
        assert_eq!(Record::of([("watt", Value::Float(80.0))]).to_string(), "{watt:80.}");
        assert_eq!(render_float(0.75), "0.75");
        assert_eq!(render_float(-0.5), "-0.5");
        assert_eq!(render_float(1e300), "1e300");
        assert_eq!(render_float(1.5e-7), "1.5e-7");
        for s in ["80.", "0.75", "1e300", "1.5e-7", "-3."] {
            let r = parse_text(&format!("{{x:{s}}}")).unwrap();
            assert!(matches!(r.get("x"), Some(Value::Float(_))));
            assert_eq!(r.to_string(), format!("{{x:{s}}}"));
        }
    }

    #[test]
    fn lineage_array() {
        let r = Record::of([(
            "from",
            Value::Array(vec![Value::str("biolab"), Value::str("lounge")]),
        )]);
        let s = r.to_string();
        assert_eq!(s, "{from:[\"biolab\",\"lounge\"]}");
        assert_eq!(parse_text(&s).unwrap(), r);
    }

    #[test]
    fn timestamps_are_bare_tokens() {
        let r = parse_text("{ts:2024-03-01T05:00:00.5Z,s:\"2024-03-01T05:00:00Z\"}").unwrap();
        assert!(matches!(r.get("ts"), Some(Value::Time(_))));
        assert!(matches!(r.get("s"), Some(Value::Str(_))));
        assert_eq!(r.to_string(), "{ts:2024-03-01T05:00:00.5Z,s:\"2024-03-01T05:00:00Z\"}");
    }

    #[test]
    fn heterogeneous_array_is_a_type_conflict() {
        let err = parse_text("{a:[1,\"x\"]}").unwrap_err();
        assert!(matches!(err, RecordError::TypeConflict { pos: 6, .. }), "{err:?}");
        // nulls may mix with anything
        let r = parse_text("{a:[1,null,3]}").unwrap();
        assert_eq!(r.schema().field("a"), Some(&Type::Array(Box::new(Type::Int64))));
        // ints and floats are distinct variants
        assert!(parse_text("{a:[1,2.5]}").is_err());
    }

    #[test]
    fn syntax_errors_report_position() {
        match parse_text("{a:1,b:}") {
            Err(RecordError::Syntax { pos, .. }) => assert_eq!(pos, 7),
            other => panic!("{other:?}"),
        }
        match parse_text("{a:1} x") {
            Err(RecordError::Syntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("{other:?}"),
        }
        assert!(parse_text("{a:99999999999999999999}").is_err());
        assert!(parse_text("{a:\"open}").is_err());
        assert!(parse_text("{1a:2}").is_err());
    }

    #[test]
    fn string_escapes_round_trip() {
        let r = Record::of([("s", Value::str("q\"b\\n\nt\t\u{1}é"))]);
        let s = r.to_string();
        assert_eq!(s, "{s:\"q\\\"b\\\\n\\nt\\t\\u0001é\"}");
        assert_eq!(parse_text(&s).unwrap(), r);
        assert_eq!(
            parse_text("{s:\"\\ud83d\\ude00\"}").unwrap().get("s"),
            Some(&Value::str("😀"))
        );
    }

    #[test]
    fn nested_records() {
        let r = parse_text("{loc:{room:\"a\",floor:2},n:[{x:1},{x:2}]}").unwrap();
        assert_eq!(r.schema().canonical(), "{loc:{room:string,floor:int64},n:[{x:int64}]}");
        assert_eq!(r.to_string(), "{loc:{room:\"a\",floor:2},n:[{x:1},{x:2}]}");
    }

    #[test]
    fn lines_with_distinct_schemas() {
        let text = "{room_energy:80,unit:\"watt\"}\n\n{room_occupancy:0.5}\n{x:[true,false]}\n";
        let recs = parse_lines(text).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(to_lines(&recs), text.replace("\n\n", "\n"));
        let err = parse_lines("{a:1}\n{b:}\n").unwrap_err();
        assert!(matches!(err, RecordError::Syntax { pos: 9, .. }), "{err:?}");
    }

    #[test]
    fn whitespace_is_tolerated() {
        let r = parse_text(" { a : 1 , b : [ 1 , 2 ] } ").unwrap();
        assert_eq!(r.to_string(), "{a:1,b:[1,2]}");
    }
}
