use std::fmt;

use crate::error::{Error, Result};
use crate::seqbuild::{LabelMode, Scheme, SequenceRecipe};

/// A sequence scheme plus the P (permute), I (hint) and G (group token) flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    pub scheme: SchemeKey,
    pub group: bool,
    pub permute: bool,
    pub hint: bool,
}

/// Orderable stand-in for [`Scheme`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKey {
    Naive,
    Proposed,
}

impl From<SchemeKey> for Scheme {
    fn from(k: SchemeKey) -> Scheme {
        match k {
            SchemeKey::Naive => Scheme::Naive,
            SchemeKey::Proposed => Scheme::Proposed,
        }
    }
}

impl Variant {
    pub const fn new(scheme: SchemeKey, group: bool, permute: bool, hint: bool) -> Self {
        Variant { scheme, group, permute, hint }
    }

    /// Every row of the results tables, in table order.
    pub const TABLE_ROWS: [Variant; 10] = [
        Variant::new(SchemeKey::Naive, false, false, false),
        Variant::new(SchemeKey::Naive, false, true, false),
        Variant::new(SchemeKey::Proposed, false, false, false),
        Variant::new(SchemeKey::Proposed, false, false, true),
        Variant::new(SchemeKey::Proposed, false, true, false),
        Variant::new(SchemeKey::Proposed, false, true, true),
        Variant::new(SchemeKey::Proposed, true, false, false),
        Variant::new(SchemeKey::Proposed, true, false, true),
        Variant::new(SchemeKey::Proposed, true, true, false),
        Variant::new(SchemeKey::Proposed, true, true, true),
    ];

    pub fn validate(&self) -> Result<()> {
        if self.scheme == SchemeKey::Naive && (self.group || self.hint) {
            return Err(Error::Config(format!("{self} is not a valid variant: G and I need the proposed scheme")));
        }
        Ok(())
    }

    /// Flag set in G, P, I order, or `-` when no flag is set.
    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.group {
            f.push("G");
        }
        if self.permute {
            f.push("P");
        }
        if self.hint {
            f.push("I");
        }
        if f.is_empty() {
            "-".to_string()
        } else {
            f.join("+")
        }
    }

    /// Method column of reports: `naive` or `proposed`.
    pub fn method(&self) -> &'static str {
        match self.scheme {
            SchemeKey::Naive => "naive",
            SchemeKey::Proposed => "proposed",
        }
    }

    /// Directory-safe name such as `proposed-gpi`.
    pub fn slug(&self) -> String {
        let f = self.flags();
        if f == "-" {
            self.method().to_string()
        } else {
            format!("{}-{}", self.method(), f.replace('+', "").to_lowercase())
        }
    }

    /// Parses a table label (`Proposed + G + P + I`), a slug
    /// (`proposed-gpi`), or `method:flags` (`proposed:G+P+I`).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown variant '{s}'"));
        let s = s.trim();
        let (head, flags): (&str, Vec<String>) = if s.contains('+') && !s.contains(':') {
            let mut parts = s.split('+').map(|p| p.trim());
            let head = parts.next().ok_or_else(bad)?;
            (head, parts.map(str::to_string).collect())
        } else if let Some((h, f)) = s.split_once(':') {
            let f = f.trim();
            let flags = if f == "-" || f.is_empty() {
                Vec::new()
            } else {
                f.split('+').map(|p| p.trim().to_string()).collect()
            };
            (h.trim(), flags)
        } else if let Some((h, f)) = s.split_once('-') {
            (h, f.chars().map(|c| c.to_string()).collect())
        } else {
            (s, Vec::new())
        };
        let scheme = match head.to_lowercase().as_str() {
            "naive" => SchemeKey::Naive,
            "proposed" => SchemeKey::Proposed,
            _ => return Err(bad()),
        };
        let mut v = Variant::new(scheme, false, false, false);
        for f in flags {
            let slot = match f.to_uppercase().as_str() {
                "G" => &mut v.group,
                "P" => &mut v.permute,
                "I" => &mut v.hint,
                _ => return Err(bad()),
            };
            if *slot {
                return Err(bad());
            }
            *slot = true;
        }
        v.validate()?;
        Ok(v)
    }

    /// Training recipe for this variant at context size `n`.
    pub fn recipe(&self, n: usize, hint_prob: f64, permute_annotations: bool) -> SequenceRecipe {
        let mut r = SequenceRecipe::new(self.scheme.into(), n);
        r.permute = self.permute;
        r.permute_annotations = permute_annotations;
        r.hint_prob = if self.hint { hint_prob } else { 0.0 };
        if self.group {
            r.label_mode = LabelMode::Group;
        }
        r
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match self.scheme {
            SchemeKey::Naive => "Naive",
            SchemeKey::Proposed => "Proposed",
        };
        let flags = self.flags();
        if flags == "-" {
            write!(f, "{head}")
        } else {
            write!(f, "{head} + {}", flags.replace('+', " + "))
        }
    }
}
