//! The fixed attribute schema: three binary attributes, each of which may
//! also be answered with "unknown".

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of attributes.
pub const NUM_ATTRIBUTES: usize = 3;
/// Number of known classes per attribute.
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Species,
    Sex,
    Age,
}

impl Attribute {
    pub const ALL: [Attribute; NUM_ATTRIBUTES] = [Attribute::Species, Attribute::Sex, Attribute::Age];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Species => "species",
            Attribute::Sex => "sex",
            Attribute::Age => "age",
        }
    }

    /// Literal names of class0 and class1.
    pub fn class_names(self) -> [&'static str; NUM_CLASSES] {
        match self {
            Attribute::Species => ["elephant", "fur"],
            Attribute::Sex => ["male", "female"],
            Attribute::Age => ["adult", "pup"],
        }
    }

    /// Name of `label` for this attribute (`unknown` for [`Label::Unknown`]).
    pub fn label_name(self, label: Label) -> &'static str {
        match label {
            Label::Class0 => self.class_names()[0],
            Label::Class1 => self.class_names()[1],
            Label::Unknown => "unknown",
        }
    }

    /// Parses a cell value. Empty and `unknown` both mean [`Label::Unknown`].
    pub fn parse_label(self, raw: &str) -> Option<Label> {
        let v = raw.trim();
        if v.is_empty() || v.eq_ignore_ascii_case("unknown") {
            return Some(Label::Unknown);
        }
        let [c0, c1] = self.class_names();
        if v.eq_ignore_ascii_case(c0) {
            Some(Label::Class0)
        } else if v.eq_ignore_ascii_case(c1) {
            Some(Label::Class1)
        } else {
            None
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Response value for one attribute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Class0,
    Class1,
    #[default]
    Unknown,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Class0, Label::Class1, Label::Unknown];
    pub const KNOWN: [Label; NUM_CLASSES] = [Label::Class0, Label::Class1];

    /// 0, 1 for the known classes, 2 for unknown.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }
}

/// One response per attribute, indexed by [`Attribute::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Responses(pub [Label; NUM_ATTRIBUTES]);

impl Responses {
    pub fn new(species: Label, sex: Label, age: Label) -> Self {
        Responses([species, sex, age])
    }

    pub fn get(&self, attribute: Attribute) -> Label {
        self.0[attribute.index()]
    }

    pub fn set(&mut self, attribute: Attribute, label: Label) {
        self.0[attribute.index()] = label;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Attribute, Label)> + '_ {
        Attribute::ALL.iter().map(move |&a| (a, self.get(a)))
    }
}

/// Serializes as `{"species": "...", "sex": "...", "age": "..."}` using class names.
impl Serialize for Responses {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(NUM_ATTRIBUTES))?;
        for (a, l) in self.iter() {
            map.serialize_entry(a.name(), a.label_name(l))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Responses {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(default)]
            species: Option<String>,
            #[serde(default)]
            sex: Option<String>,
            #[serde(default)]
            age: Option<String>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let mut out = Responses::default();
        for (a, v) in Attribute::ALL.into_iter().zip([raw.species, raw.sex, raw.age]) {
            let v = v.unwrap_or_default();
            let label = a.parse_label(&v).ok_or_else(|| {
                serde::de::Error::custom(format!("invalid {a} value '{v}'"))
            })?;
            out.set(a, label);
        }
        Ok(out)
    }
}
