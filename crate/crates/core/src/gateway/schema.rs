//! Minimal structural schemas for model outputs.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Any,
    String,
    NonEmptyString,
    /// Integral number (a float with zero fractional part is accepted).
    Integer { min: i64, max: i64 },
    Number,
    /// One of the listed strings, compared case-insensitively.
    Enum(Vec<String>),
    /// A percentage string such as "85%" or "12.5 %".
    Percent,
    Array { items: Box<Shape>, min_len: usize },
    Object(Vec<Field>),
    /// Object with arbitrary keys whose values all match the shape.
    Map(Box<Shape>),
    OneOf(Vec<Shape>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub key: String,
    pub aliases: Vec<String>,
    pub shape: Shape,
    pub required: bool,
}

impl Field {
    pub fn required(key: &str, shape: Shape) -> Field {
        Field {
            key: key.to_string(),
            aliases: Vec::new(),
            shape,
            required: true,
        }
    }

    pub fn optional(key: &str, shape: Shape) -> Field {
        Field {
            required: false,
            ..Field::required(key, shape)
        }
    }

    pub fn alias(mut self, alias: &str) -> Field {
        self.aliases.push(alias.to_string());
        self
    }

    /// Looks the field up under its key or any alias.
    pub fn lookup<'a>(&self, obj: &'a serde_json::Map<String, Value>) -> Option<&'a Value> {
        std::iter::once(&self.key)
            .chain(self.aliases.iter())
            .find_map(|k| obj.get(k))
    }
}

impl Shape {
    pub fn array(items: Shape) -> Shape {
        Shape::Array {
            items: Box::new(items),
            min_len: 0,
        }
    }

    pub fn non_empty_array(items: Shape) -> Shape {
        Shape::Array {
            items: Box::new(items),
            min_len: 1,
        }
    }

    pub fn enumeration(values: &[&str]) -> Shape {
        Shape::Enum(values.iter().map(|s| s.to_string()).collect())
    }

    fn describe(&self) -> String {
        match self {
            Shape::Any => "any value".into(),
            Shape::String => "a string".into(),
            Shape::NonEmptyString => "a non-empty string".into(),
            Shape::Integer { min, max } => format!("an integer in [{min}, {max}]"),
            Shape::Number => "a number".into(),
            Shape::Enum(v) => format!("one of {v:?}"),
            Shape::Percent => "a percentage string like \"42%\"".into(),
            Shape::Array { min_len, .. } => format!("an array with at least {min_len} items"),
            Shape::Object(_) => "an object".into(),
            Shape::Map(_) => "an object".into(),
            Shape::OneOf(_) => "one of several object forms".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "at {}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemaSpec {
    pub name: String,
    pub root: Shape,
}

impl SchemaSpec {
    pub fn new(name: &str, root: Shape) -> SchemaSpec {
        SchemaSpec {
            name: name.to_string(),
            root,
        }
    }

    pub fn validate(&self, value: &Value) -> Result<(), SchemaError> {
        check(&self.root, value, "$")
    }
}

pub fn parse_percent(s: &str) -> Option<f64> {
    let t = s.trim();
    let t = t.strip_suffix('%').unwrap_or(t).trim();
    if t.is_empty() || t.contains('%') {
        return None;
    }
    let v: f64 = t.parse().ok()?;
    (v.is_finite() && (0.0..=100.0).contains(&v)).then_some(v)
}

fn fail(path: &str, shape: &Shape, value: &Value) -> Result<(), SchemaError> {
    let mut shown = value.to_string();
    if shown.len() > 60 {
        let cut = (0..=60).rev().find(|&i| shown.is_char_boundary(i)).unwrap_or(0);
        shown.truncate(cut);
        shown.push_str("...");
    }
    Err(SchemaError {
        path: path.to_string(),
        message: format!("expected {}, found {shown}", shape.describe()),
    })
}

fn check(shape: &Shape, value: &Value, path: &str) -> Result<(), SchemaError> {
    match shape {
        Shape::Any => Ok(()),
        Shape::String => match value {
            Value::String(_) => Ok(()),
            _ => fail(path, shape, value),
        },
        Shape::NonEmptyString => match value {
            Value::String(s) if !s.trim().is_empty() => Ok(()),
            _ => fail(path, shape, value),
        },
        Shape::Integer { min, max } => {
            let n = value
                .as_i64()
                .or_else(|| value.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64));
            match n {
                Some(n) if n >= *min && n <= *max => Ok(()),
                _ => fail(path, shape, value),
            }
        }
        Shape::Number => match value.as_f64() {
            Some(f) if f.is_finite() => Ok(()),
            _ => fail(path, shape, value),
        },
        Shape::Enum(options) => match value {
            Value::String(s) if options.iter().any(|o| o.eq_ignore_ascii_case(s.trim())) => Ok(()),
            _ => fail(path, shape, value),
        },
        Shape::Percent => match value {
            Value::String(s) if parse_percent(s).is_some() => Ok(()),
            _ => fail(path, shape, value),
        },
        Shape::Array { items, min_len } => match value {
            Value::Array(arr) if arr.len() >= *min_len => {
                for (i, item) in arr.iter().enumerate() {
                    check(items, item, &format!("{path}[{i}]"))?;
                }
                Ok(())
            }
            _ => fail(path, shape, value),
        },
        Shape::Object(fields) => match value {
            Value::Object(obj) => {
                for field in fields {
                    match field.lookup(obj) {
                        Some(v) => check(&field.shape, v, &format!("{path}.{}", field.key))?,
                        None if field.required => {
                            return Err(SchemaError {
                                path: format!("{path}.{}", field.key),
                                message: "missing required key".into(),
                            })
                        }
                        None => {}
                    }
                }
                Ok(())
            }
            _ => fail(path, shape, value),
        },
        Shape::Map(inner) => match value {
            Value::Object(obj) => {
                for (k, v) in obj {
                    check(inner, v, &format!("{path}.{k}"))?;
                }
                Ok(())
            }
            _ => fail(path, shape, value),
        },
        Shape::OneOf(options) => {
            let mut first_err = None;
            for option in options {
                match check(option, value, path) {
                    Ok(()) => return Ok(()),
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            Err(first_err.unwrap_or(SchemaError {
                path: path.to_string(),
                message: "no alternatives".into(),
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn stress_like() -> SchemaSpec {
        SchemaSpec::new(
            "stress",
            Shape::Object(vec![Field::required(
                "features",
                Shape::array(Shape::Object(vec![
                    Field::required("features", Shape::NonEmptyString),
                    Field::required("stress_level", Shape::Integer { min: 0, max: 100 }),
                    Field::optional("explanation", Shape::String).alias("reason"),
                ])),
            )]),
        )
    }

    #[test]
    fn accepts_valid() {
        let s = stress_like();
        assert!(s.validate(&json!({"features": []})).is_ok());
        assert!(s
            .validate(&json!({"features": [{"features": "age", "stress_level": 25.0, "reason": "x"}]}))
            .is_ok());
    }

    #[test]
    fn reports_path() {
        let s = stress_like();
        let err = s
            .validate(&json!({"features": [{"features": "age", "stress_level": 101}]}))
            .unwrap_err();
        assert_eq!(err.path, "$.features[0].stress_level");
        let err = s.validate(&json!({"features": [{"features": "age"}]})).unwrap_err();
        assert_eq!(err.message, "missing required key");
        let err = s
            .validate(&json!({"features": [{"features": "a", "stress_level": 1, "reason": 3}]}))
            .unwrap_err();
        assert_eq!(err.path, "$.features[0].explanation");
    }

    #[test]
    fn percent_strings() {
        assert_eq!(parse_percent("85%"), Some(85.0));
        assert_eq!(parse_percent(" 12.5 % "), Some(12.5));
        assert_eq!(parse_percent("40"), Some(40.0));
        assert_eq!(parse_percent("%%"), None);
        assert_eq!(parse_percent("x%"), None);
        assert_eq!(parse_percent("150%"), None);
        let s = SchemaSpec::new("p", Shape::Map(Box::new(Shape::Percent)));
        assert!(s.validate(&json!({"A": "10%", "B": "90%"})).is_ok());
        assert!(s.validate(&json!({"A": "%%"})).is_err());
    }

    #[test]
    fn one_of() {
        let s = SchemaSpec::new(
            "syn",
            Shape::array(Shape::OneOf(vec![
                Shape::Object(vec![Field::required("conclusion", Shape::NonEmptyString)]),
                Shape::Object(vec![Field::required("reasoning_stage", Shape::String)]),
            ])),
        );
        assert!(s
            .validate(&json!([{"reasoning_stage": "Dominant"}, {"conclusion": "(A)"}]))
            .is_ok());
        assert!(s.validate(&json!([{"other": 1}])).is_err());
    }
}
