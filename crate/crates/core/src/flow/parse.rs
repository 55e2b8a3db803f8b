use crate::record::{RecordError, Scanner, Type, Value};

use super::{AggFn, AggSpec, BinOp, Expr, FlowError, Pipeline, Stage, TypeSpec};

const RESERVED: &[&str] = &["and", "or", "true", "false", "null", "has", "by", "this"];

/// Parses a pipeline. Empty (or all-whitespace) text is the identity pipeline.
pub fn parse_pipeline(text: &str) -> Result<Pipeline, FlowError> {
    let mut p = Parser {
        sc: Scanner::new(text),
    };
    let mut stages = Vec::new();
    p.sc.skip_ws();
    if !p.sc.at_end() {
        loop {
            p.sc.skip_ws();
            stages.push(p.stage()?);
            p.sc.skip_ws();
            if p.sc.at_end() {
                break;
            }
            if !p.sc.eat("|") {
                return Err(p.err("expected `|` between stages"));
            }
        }
    }
    Pipeline::new(stages)
}

impl From<RecordError> for FlowError {
    fn from(e: RecordError) -> Self {
        match e {
            RecordError::Syntax { pos, msg } | RecordError::TypeConflict { pos, msg } => {
                FlowError::Syntax { pos, msg }
            }
            other => FlowError::Syntax {
                pos: 0,
                msg: other.to_string(),
            },
        }
    }
}

struct Parser<'a> {
    sc: Scanner<'a>,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> FlowError {
        FlowError::Syntax {
            pos: self.sc.pos(),
            msg: msg.to_string(),
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), FlowError> {
        self.sc.skip_ws();
        if self.sc.eat(s) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{s}`")))
        }
    }

    fn field(&mut self) -> Result<String, FlowError> {
        self.sc.skip_ws();
        let at = self.sc.pos();
        let name = self.sc.ident()?;
        if RESERVED.contains(&name.as_str()) {
            return Err(FlowError::Syntax {
                pos: at,
                msg: format!("`{name}` is reserved"),
            });
        }
        Ok(name)
    }

    fn field_list(&mut self) -> Result<Vec<String>, FlowError> {
        let mut out = vec![self.field()?];
        while self.eat_comma() {
            out.push(self.field()?);
        }
        Ok(out)
    }

    fn eat_comma(&mut self) -> bool {
        self.sc.skip_ws();
        self.sc.eat(",")
    }

    /// Looks ahead for `name(` or `name:=fn(` without consuming.
    fn at_aggregate(&self) -> bool {
        let rest = self.sc.rest();
        let ident_len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        let (word, after) = rest.split_at(ident_len);
        let after = after.trim_start();
        if AggFn::from_name(word).is_some() && after.starts_with('(') {
            return true;
        }
        if let Some(tail) = after.strip_prefix(":=") {
            let tail = tail.trim_start();
            let n = tail
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(tail.len());
            return AggFn::from_name(&tail[..n]).is_some() && tail[n..].trim_start().starts_with('(');
        }
        false
    }

    fn stage(&mut self) -> Result<Stage, FlowError> {
        if self.at_aggregate() {
            return self.aggregate();
        }
        if self.sc.eat_keyword("where") {
            return Ok(Stage::Where(self.expr()?));
        }
        if self.sc.eat_keyword("head") {
            self.sc.skip_ws();
            if matches!(self.sc.peek(), Some(c) if c.is_ascii_digit()) {
                let at = self.sc.pos();
                return match self.sc.value()? {
                    Value::Int(n) if n > 0 => Ok(Stage::Head(n as usize)),
                    _ => Err(FlowError::Syntax {
                        pos: at,
                        msg: "head expects a positive integer".into(),
                    }),
                };
            }
            return Ok(Stage::Head(1));
        }
        if self.sc.eat_keyword("sort") {
            self.sc.skip_ws();
            let descending = self.sc.eat("-r");
            if descending && !matches!(self.sc.peek(), Some(c) if c.is_whitespace()) {
                return Err(self.err("expected whitespace after `-r`"));
            }
            let field = self.field()?;
            return Ok(Stage::Sort { field, descending });
        }
        if self.sc.eat_keyword("cut") {
            return Ok(Stage::Cut(self.field_list()?));
        }
        if self.sc.eat_keyword("rename") {
            let mut pairs = vec![self.assignment_pair()?];
            while self.eat_comma() {
                pairs.push(self.assignment_pair()?);
            }
            return Ok(Stage::Rename(pairs));
        }
        if self.sc.eat_keyword("put") {
            let field = self.field()?;
            self.expect(":=")?;
            let expr = self.expr()?;
            return Ok(Stage::Put { field, expr });
        }
        if self.sc.eat_keyword("shape") {
            self.expect("(")?;
            self.sc.skip_ws();
            if !self.sc.eat_keyword("this") {
                return Err(self.err("expected `this`"));
            }
            self.expect(",")?;
            let spec = self.type_spec()?;
            self.expect(")")?;
            return Ok(Stage::Shape(spec));
        }
        if self.sc.eat_keyword("log") {
            return Ok(Stage::Log(self.string_arg()?));
        }
        if self.sc.eat_keyword("reject") {
            return Ok(Stage::Reject(self.string_arg()?));
        }
        Err(self.err("expected a stage"))
    }

    fn string_arg(&mut self) -> Result<String, FlowError> {
        self.expect("(")?;
        self.sc.skip_ws();
        if self.sc.peek() != Some('"') {
            return Err(self.err("expected a quoted string"));
        }
        let s = self.sc.string()?;
        self.expect(")")?;
        Ok(s)
    }

    fn assignment_pair(&mut self) -> Result<(String, String), FlowError> {
        let new = self.field()?;
        self.expect(":=")?;
        let old = self.field()?;
        Ok((new, old))
    }

    fn aggregate(&mut self) -> Result<Stage, FlowError> {
        let mut aggs = vec![self.agg()?];
        while self.eat_comma() {
            aggs.push(self.agg()?);
        }
        self.sc.skip_ws();
        let by = if self.sc.eat_keyword("by") {
            self.field_list()?
        } else {
            Vec::new()
        };
        Ok(Stage::Aggregate { aggs, by })
    }

    fn agg(&mut self) -> Result<AggSpec, FlowError> {
        self.sc.skip_ws();
        let at = self.sc.pos();
        let first = self.sc.ident()?;
        self.sc.skip_ws();
        let (output, fname) = if self.sc.eat(":=") {
            self.sc.skip_ws();
            (Some(first), self.sc.ident()?)
        } else {
            (None, first)
        };
        let func = AggFn::from_name(&fname).ok_or(FlowError::Syntax {
            pos: at,
            msg: format!("unknown aggregate function `{fname}`"),
        })?;
        self.expect("(")?;
        self.sc.skip_ws();
        let input = if self.sc.peek() == Some(')') {
            None
        } else {
            Some(self.field()?)
        };
        self.expect(")")?;
        match (func, &input) {
            (AggFn::Count, Some(_)) => return Err(self.err("count() takes no argument")),
            (AggFn::Count, None) => {}
            (_, None) => return Err(self.err("aggregate needs a field argument")),
            _ => {}
        }
        let mut spec = AggSpec::new(func, input.as_deref());
        if let Some(out) = output {
            if RESERVED.contains(&out.as_str()) {
                return Err(FlowError::Syntax {
                    pos: at,
                    msg: format!("`{out}` is reserved"),
                });
            }
            spec.output = out;
        }
        Ok(spec)
    }

    fn type_spec(&mut self) -> Result<TypeSpec, FlowError> {
        self.expect("<{")?;
        let mut fields = Vec::new();
        self.sc.skip_ws();
        if !self.sc.rest().starts_with('}') {
            loop {
                let name = self.field()?;
                self.expect(":")?;
                fields.push((name, self.scalar_type()?));
                if !self.eat_comma() {
                    break;
                }
            }
        }
        self.expect("}>")?;
        Ok(TypeSpec { fields })
    }

    fn scalar_type(&mut self) -> Result<Type, FlowError> {
        self.sc.skip_ws();
        let at = self.sc.pos();
        let name = self.sc.ident()?;
        match Type::from_name(&name) {
            Some(Type::Null) | None => Err(FlowError::Syntax {
                pos: at,
                msg: format!("unknown type `{name}`"),
            }),
            Some(t) => Ok(t),
        }
    }

    fn expr(&mut self) -> Result<Expr, FlowError> {
        self.binary(1)
    }

    fn peek_op(&mut self) -> Option<BinOp> {
        self.sc.skip_ws();
        let rest = self.sc.rest();
        let op = if rest.starts_with("==") {
            BinOp::Eq
        } else if rest.starts_with("!=") {
            BinOp::Ne
        } else if rest.starts_with("<=") {
            BinOp::Le
        } else if rest.starts_with(">=") {
            BinOp::Ge
        } else if rest.starts_with('<') {
            BinOp::Lt
        } else if rest.starts_with('>') {
            BinOp::Gt
        } else if rest.starts_with('+') {
            BinOp::Add
        } else if rest.starts_with('-') {
            BinOp::Sub
        } else if rest.starts_with('*') {
            BinOp::Mul
        } else if rest.starts_with('/') {
            BinOp::Div
        } else if starts_with_word(rest, "and") {
            BinOp::And
        } else if starts_with_word(rest, "or") {
            BinOp::Or
        } else {
            return None;
        };
        Some(op)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, FlowError> {
        let mut lhs = self.primary()?;
        while let Some(op) = self.peek_op() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.sc.eat(op.symbol());
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Expr, FlowError> {
        self.sc.skip_ws();
        match self.sc.peek() {
            Some('(') => {
                self.sc.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Some('"') | Some('[') | Some('{') => Ok(Expr::Lit(self.sc.value()?)),
            Some(c) if c.is_ascii_digit() => Ok(Expr::Lit(self.sc.value()?)),
            Some('-') if matches!(self.sc.peek_at(1), Some(c) if c.is_ascii_digit()) => {
                Ok(Expr::Lit(self.sc.value()?))
            }
            Some(_) => {
                if self.sc.eat_keyword("true") {
                    return Ok(Expr::Lit(Value::Bool(true)));
                }
                if self.sc.eat_keyword("false") {
                    return Ok(Expr::Lit(Value::Bool(false)));
                }
                if self.sc.eat_keyword("null") {
                    return Ok(Expr::Lit(Value::Null));
                }
                if self.sc.eat_keyword("has") {
                    self.expect("(")?;
                    let field = self.field()?;
                    self.sc.skip_ws();
                    let e = if self.sc.eat(":") {
                        let ty = self.scalar_type()?;
                        Expr::HasType { field, ty }
                    } else {
                        Expr::HasField(field)
                    };
                    self.expect(")")?;
                    return Ok(e);
                }
                Ok(Expr::Field(self.field()?))
            }
            None => Err(self.err("unexpected end of expression")),
        }
    }
}

fn starts_with_word(s: &str, w: &str) -> bool {
    s.starts_with(w) && !s[w.len()..].starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_')
}
