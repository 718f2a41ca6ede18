use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("header `{schema}` declares field `{field}` twice")]
    DuplicateField { schema: String, field: String },
    #[error("header `{schema}` field `{field}` has unsupported width {width}")]
    BadWidth {
        schema: String,
        field: String,
        width: usize,
    },
    #[error("header `{0}` has no fields")]
    Empty(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub width: usize,
    /// Byte arrays are only reachable through memory copies, never LDH/STH.
    pub array: bool,
}

/// An application header layout, fixed a priori and shared by all lambdas.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeaderSchema {
    name: String,
    fields: Vec<FieldSpec>,
    total_width: usize,
}

impl HeaderSchema {
    pub fn new(name: impl Into<String>, fields: Vec<FieldSpec>) -> Result<Self, SchemaError> {
        let name = name.into();
        if fields.is_empty() {
            return Err(SchemaError::Empty(name));
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(SchemaError::DuplicateField {
                    schema: name,
                    field: f.name.clone(),
                });
            }
            let ok = if f.array {
                f.width > 0
            } else {
                matches!(f.width, 1 | 2 | 4 | 8)
            };
            if !ok {
                return Err(SchemaError::BadWidth {
                    schema: name,
                    field: f.name.clone(),
                    width: f.width,
                });
            }
        }
        let total_width = fields.iter().map(|f| f.width).sum();
        Ok(HeaderSchema {
            name,
            fields,
            total_width,
        })
    }

    /// Shorthand for scalar-only schemas: `[("op", 1), ("key_len", 2)]`.
    pub fn scalars(name: &str, fields: &[(&str, usize)]) -> Result<Self, SchemaError> {
        Self::new(
            name,
            fields
                .iter()
                .map(|(n, w)| FieldSpec {
                    name: n.to_string(),
                    width: *w,
                    array: false,
                })
                .collect(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn total_width(&self) -> usize {
        self.total_width
    }

    /// Byte offset and spec of `field` within the header.
    pub fn field(&self, field: &str) -> Option<(usize, &FieldSpec)> {
        let mut off = 0;
        for f in &self.fields {
            if f.name == field {
                return Some((off, f));
            }
            off += f.width;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_and_width() {
        let s = HeaderSchema::scalars("kvHdr", &[("op", 1), ("key_len", 2), ("val_len", 2)]).unwrap();
        assert_eq!(s.total_width(), 5);
        assert_eq!(s.field("val_len").unwrap().0, 3);
        assert!(s.field("nope").is_none());
    }

    #[test]
    fn rejects_duplicates_and_widths() {
        assert!(matches!(
            HeaderSchema::scalars("h", &[("a", 1), ("a", 2)]),
            Err(SchemaError::DuplicateField { .. })
        ));
        assert!(matches!(
            HeaderSchema::scalars("h", &[("a", 3)]),
            Err(SchemaError::BadWidth { .. })
        ));
        let arr = HeaderSchema::new(
            "h",
            vec![FieldSpec {
                name: "addr".into(),
                width: 20,
                array: true,
            }],
        )
        .unwrap();
        assert_eq!(arr.total_width(), 20);
    }
}
