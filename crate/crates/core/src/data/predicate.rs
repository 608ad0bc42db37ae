use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{date_to_value, DataError, Field, Schema, SubjectRecord};

/// A comparison operand: a number or an ISO calendar date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Date(NaiveDate),
}

impl Scalar {
    pub fn value(self) -> f64 {
        match self {
            Scalar::Number(v) => v,
            Scalar::Date(d) => date_to_value(d),
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Number(v)
    }
}

impl From<NaiveDate> for Scalar {
    fn from(d: NaiveDate) -> Self {
        Scalar::Date(d)
    }
}

/// Serializable record predicate. Comparisons against a missing cell are
/// false; use `present` / `missing` to test for missingness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Condition {
    Lt { column: String, value: Scalar },
    Le { column: String, value: Scalar },
    Gt { column: String, value: Scalar },
    Ge { column: String, value: Scalar },
    Eq { column: String, value: Scalar },
    Ne { column: String, value: Scalar },
    Between { column: String, min: Scalar, max: Scalar },
    Present { column: String },
    Missing { column: String },
    All { conditions: Vec<Condition> },
    Any { conditions: Vec<Condition> },
    Not { condition: Box<Condition> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// A [`Condition`] with its column names resolved against a schema.
#[derive(Debug, Clone, PartialEq)]
pub enum CompiledCondition {
    Compare(Field, Cmp, f64),
    Between(Field, f64, f64),
    Present(Field),
    Missing(Field),
    All(Vec<CompiledCondition>),
    Any(Vec<CompiledCondition>),
    Not(Box<CompiledCondition>),
}

impl Condition {
    pub fn compile(&self, schema: &Schema) -> Result<CompiledCondition, DataError> {
        use Condition as C;
        let cmp = |column: &str, op: Cmp, v: &Scalar| -> Result<CompiledCondition, DataError> {
            Ok(CompiledCondition::Compare(schema.resolve(column)?, op, v.value()))
        };
        match self {
            C::Lt { column, value } => cmp(column, Cmp::Lt, value),
            C::Le { column, value } => cmp(column, Cmp::Le, value),
            C::Gt { column, value } => cmp(column, Cmp::Gt, value),
            C::Ge { column, value } => cmp(column, Cmp::Ge, value),
            C::Eq { column, value } => cmp(column, Cmp::Eq, value),
            C::Ne { column, value } => cmp(column, Cmp::Ne, value),
            C::Between { column, min, max } => {
                Ok(CompiledCondition::Between(schema.resolve(column)?, min.value(), max.value()))
            }
            C::Present { column } => Ok(CompiledCondition::Present(schema.resolve(column)?)),
            C::Missing { column } => Ok(CompiledCondition::Missing(schema.resolve(column)?)),
            C::All { conditions } => Ok(CompiledCondition::All(
                conditions.iter().map(|c| c.compile(schema)).collect::<Result<_, _>>()?,
            )),
            C::Any { conditions } => Ok(CompiledCondition::Any(
                conditions.iter().map(|c| c.compile(schema)).collect::<Result<_, _>>()?,
            )),
            C::Not { condition } => Ok(CompiledCondition::Not(Box::new(condition.compile(schema)?))),
        }
    }

    /// Every column this condition reads.
    pub fn columns(&self) -> Vec<&str> {
        use Condition as C;
        match self {
            C::Lt { column, .. }
            | C::Le { column, .. }
            | C::Gt { column, .. }
            | C::Ge { column, .. }
            | C::Eq { column, .. }
            | C::Ne { column, .. }
            | C::Between { column, .. }
            | C::Present { column }
            | C::Missing { column } => vec![column.as_str()],
            C::All { conditions } | C::Any { conditions } => {
                conditions.iter().flat_map(|c| c.columns()).collect()
            }
            C::Not { condition } => condition.columns(),
        }
    }

    pub fn equals(column: &str, value: impl Into<Scalar>) -> Self {
        Condition::Eq { column: column.into(), value: value.into() }
    }

    pub fn between(column: &str, min: impl Into<Scalar>, max: impl Into<Scalar>) -> Self {
        Condition::Between { column: column.into(), min: min.into(), max: max.into() }
    }

    pub fn ge(column: &str, value: impl Into<Scalar>) -> Self {
        Condition::Ge { column: column.into(), value: value.into() }
    }

    pub fn le(column: &str, value: impl Into<Scalar>) -> Self {
        Condition::Le { column: column.into(), value: value.into() }
    }
}

impl CompiledCondition {
    pub fn eval(&self, record: &SubjectRecord) -> bool {
        self.eval_with(&|f| record.value(f))
    }

    /// Evaluates against an arbitrary cell lookup, so callers can hide
    /// fields (e.g. everything after the index date).
    pub fn eval_with(&self, cell: &dyn Fn(Field) -> Option<f64>) -> bool {
        match self {
            CompiledCondition::Compare(f, op, v) => match cell(*f) {
                None => false,
                Some(x) => match op {
                    Cmp::Lt => x < *v,
                    Cmp::Le => x <= *v,
                    Cmp::Gt => x > *v,
                    Cmp::Ge => x >= *v,
                    Cmp::Eq => x == *v,
                    Cmp::Ne => x != *v,
                },
            },
            CompiledCondition::Between(f, lo, hi) => cell(*f).is_some_and(|x| *lo <= x && x <= *hi),
            CompiledCondition::Present(f) => cell(*f).is_some(),
            CompiledCondition::Missing(f) => cell(*f).is_none(),
            CompiledCondition::All(cs) => cs.iter().all(|c| c.eval_with(cell)),
            CompiledCondition::Any(cs) => cs.iter().any(|c| c.eval_with(cell)),
            CompiledCondition::Not(c) => !c.eval_with(cell),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, SourceTag};

    #[test]
    fn parses_and_evaluates() {
        let json = r#"{"op":"all","conditions":[
            {"op":"ge","column":"age","value":18},
            {"op":"le","column":"index_date","value":"2020-06-30"},
            {"op":"not","condition":{"op":"missing","column":"age"}}]}"#;
        let c: Condition = serde_json::from_str(json).unwrap();
        assert_eq!(c.columns(), ["age", "index_date", "age"]);
        let schema = Schema::real(&["age"]);
        let compiled = c.compile(&schema).unwrap();
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let r = SubjectRecord::new("a", vec![Some(40.0)], Arm::Control, true, Some(0.0), SourceTag::internal("s"))
            .with_index_date(d);
        assert!(compiled.eval(&r));
        let young = SubjectRecord::new("b", vec![Some(10.0)], Arm::Control, true, Some(0.0), SourceTag::internal("s"))
            .with_index_date(d);
        assert!(!compiled.eval(&young));
        let missing = SubjectRecord::new("c", vec![None], Arm::Control, true, Some(0.0), SourceTag::internal("s"))
            .with_index_date(d);
        assert!(!compiled.eval(&missing));
    }

    #[test]
    fn unknown_column() {
        let c = Condition::equals("bmi", 1.0);
        assert_eq!(c.compile(&Schema::real(&["age"])), Err(DataError::UnknownColumn("bmi".into())));
    }
}
