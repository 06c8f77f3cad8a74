use crate::error::{FieldError, MclError, Result};

/// Collects every problem in a config tree before reporting, each located by
/// dotted path.
#[derive(Debug, Default)]
pub struct Validator {
    errors: Vec<FieldError>,
}

impl Validator {
    pub fn check(&mut self, ok: bool, prefix: &str, field: &str, msg: impl Into<String>) {
        if !ok {
            self.errors.push(FieldError { path: join(prefix, field), msg: msg.into() });
        }
    }

    pub fn errors(&self) -> &[FieldError] {
        &self.errors
    }

    pub fn finish(self) -> Result<()> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(MclError::Validation(self.errors))
        }
    }
}

pub fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

pub trait Validate {
    fn validate_into(&self, prefix: &str, v: &mut Validator);

    fn validate(&self) -> Result<()> {
        let mut v = Validator::default();
        self.validate_into("", &mut v);
        v.finish()
    }
}

pub(crate) fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}
