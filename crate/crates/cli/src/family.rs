use passuntil::oracles::{SyntheticLaw, SyntheticModel};

use crate::cli::FamilyArgs;

/// Parses `c=<c>,alpha=<alpha>`. Whitespace around parts is ignored and
/// `a` is accepted for `alpha`.
pub fn parse_law(text: &str) -> Result<SyntheticLaw, String> {
    let mut c = None;
    let mut alpha = None;
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("`{part}` is not of the form key=value"))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| format!("`{}` is not a number", value.trim()))?;
        match key.trim() {
            "c" => c = Some(v),
            "alpha" | "a" => alpha = Some(v),
            other => return Err(format!("unknown law parameter `{other}`")),
        }
    }
    let (Some(c), Some(alpha)) = (c, alpha) else {
        return Err(format!("law `{text}` needs both c and alpha"));
    };
    SyntheticLaw::new(c, alpha).map_err(|e| e.to_string())
}

/// Parses laws separated by `;`.
pub fn parse_laws(text: &str) -> Result<Vec<SyntheticLaw>, String> {
    let laws = text
        .split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(parse_law)
        .collect::<Result<Vec<_>, _>>()?;
    if laws.is_empty() {
        return Err("no laws given".into());
    }
    Ok(laws)
}

impl FamilyArgs {
    pub fn model(&self) -> Result<Option<SyntheticModel>, String> {
        Ok(if let Some(p) = self.p {
            Some(SyntheticModel::Fixed { p })
        } else if let Some(law) = &self.law {
            Some(SyntheticModel::Law(parse_law(law)?))
        } else if let Some(steps) = &self.steps {
            Some(SyntheticModel::Steps { laws: parse_laws(steps)? })
        } else if let Some(circuits) = &self.circuits {
            Some(SyntheticModel::Circuits {
                laws: parse_laws(circuits)?,
            })
        } else {
            None
        })
    }
}
