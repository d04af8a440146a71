//! Reference equations shipped with the crate.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Certified,
    Rejected,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Entry {
    pub name: &'static str,
    /// File contents, comments included.
    pub source: &'static str,
    pub expected: Expected,
    /// Order used for golden reports; smaller where the operator is costly.
    pub order: usize,
}

macro_rules! entry {
    ($name:literal, $expected:ident, $order:literal) => {
        Entry {
            name: $name,
            source: include_str!(concat!("../corpus/", $name, ".eq")),
            expected: Expected::$expected,
            order: $order,
        }
    };
}

pub const CORPUS: &[Entry] = &[
    entry!("planar_binary", Certified, 1201),
    entry!("planar", Certified, 600),
    entry!("rooted_trees", Certified, 500),
    entry!("labelled_trees", Certified, 200),
    entry!("unordered_binary", Certified, 600),
    entry!("chains", Rejected, 200),
    entry!("half_mset2", Rejected, 1500),
    entry!("mixed_classes", Certified, 200),
];

pub fn lookup(name: &str) -> Option<&'static Entry> {
    CORPUS.iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::certify;
    use crate::term::parse;

    #[test]
    fn every_entry_parses_and_classifies_as_expected() {
        for e in CORPUS {
            let t = parse(e.source).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            let got = if certify(&t).is_certified() { Expected::Certified } else { Expected::Rejected };
            assert_eq!(got, e.expected, "{}", e.name);
        }
        assert!(lookup("planar").is_some() && lookup("nope").is_none());
    }
}
