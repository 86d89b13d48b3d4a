//! Item identifiers and total per-item maps.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The eight language-related Module 3 items scored by this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ItemId {
    A4,
    A7,
    A8,
    B4,
    B7,
    B9,
    B10,
    B11,
}

impl ItemId {
    pub const ALL: [ItemId; 8] = [
        ItemId::A4,
        ItemId::A7,
        ItemId::A8,
        ItemId::B4,
        ItemId::B7,
        ItemId::B9,
        ItemId::B10,
        ItemId::B11,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ItemId::A4 => "A4",
            ItemId::A7 => "A7",
            ItemId::A8 => "A8",
            ItemId::B4 => "B4",
            ItemId::B7 => "B7",
            ItemId::B9 => "B9",
            ItemId::B10 => "B10",
            ItemId::B11 => "B11",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown item label `{0}`")]
pub struct UnknownItem(pub String);

impl FromStr for ItemId {
    type Err = UnknownItem;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ItemId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownItem(s.to_string()))
    }
}

impl Serialize for ItemId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ItemId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("missing item {0}")]
pub struct MissingItem(pub ItemId);

/// A value for every one of the eight items.
///
/// Totality is enforced by construction; deserializing a JSON object that
/// lacks an item fails with the name of the first missing item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ItemMap<T>([T; 8]);

impl<T> ItemMap<T> {
    pub fn from_fn(mut f: impl FnMut(ItemId) -> T) -> Self {
        ItemMap(ItemId::ALL.map(&mut f))
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(ItemId) -> Result<T, E>) -> Result<Self, E> {
        let mut values = Vec::with_capacity(8);
        for id in ItemId::ALL {
            values.push(f(id)?);
        }
        match values.try_into() {
            Ok(arr) => Ok(ItemMap(arr)),
            Err(_) => unreachable!("exactly eight items"),
        }
    }

    /// Builds a total map from a partial one.
    pub fn from_partial(mut partial: BTreeMap<ItemId, T>) -> Result<Self, MissingItem> {
        Self::try_from_fn(|id| partial.remove(&id).ok_or(MissingItem(id)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &T)> {
        ItemId::ALL.into_iter().zip(self.0.iter())
    }

    pub fn values(&self) -> &[T; 8] {
        &self.0
    }

    pub fn map<U>(&self, mut f: impl FnMut(ItemId, &T) -> U) -> ItemMap<U> {
        ItemMap::from_fn(|id| f(id, &self.0[id.index()]))
    }
}

impl<T> Index<ItemId> for ItemMap<T> {
    type Output = T;

    fn index(&self, id: ItemId) -> &T {
        &self.0[id.index()]
    }
}

impl<T> IndexMut<ItemId> for ItemMap<T> {
    fn index_mut(&mut self, id: ItemId) -> &mut T {
        &mut self.0[id.index()]
    }
}

impl<T: Serialize> Serialize for ItemMap<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(8))?;
        for (id, v) in self.iter() {
            map.serialize_entry(id.as_str(), v)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for ItemMap<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let partial = BTreeMap::<ItemId, T>::deserialize(d)?;
        ItemMap::from_partial(partial).map_err(D::Error::custom)
    }
}

/// Integer scores for the eight items (0..=3).
pub type ItemScores = ItemMap<u8>;

/// Where a score sheet came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Rule,
    Llm,
    Fused,
    Clinician,
    Random,
}

impl ScoreSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSource::Rule => "rule",
            ScoreSource::Llm => "llm",
            ScoreSource::Fused => "fused",
            ScoreSource::Clinician => "clinician",
            ScoreSource::Random => "random",
        }
    }
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Integer item scores tagged with their source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemScoreSheet {
    pub source: ScoreSource,
    pub scores: ItemScores,
}

impl ItemScoreSheet {
    pub fn new(source: ScoreSource, scores: ItemScores) -> Self {
        ItemScoreSheet { source, scores }
    }

    pub fn as_real(&self) -> ItemMap<f64> {
        self.scores.map(|_, &s| f64::from(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labels_case_insensitively() {
        assert_eq!("b10".parse::<ItemId>().unwrap(), ItemId::B10);
        assert!("C1".parse::<ItemId>().is_err());
    }

    #[test]
    fn deserialize_reports_first_missing_item() {
        let json = r#"{"A4":0,"A7":1,"A8":1,"B4":0,"B7":2,"B9":1,"B10":0}"#;
        let err = serde_json::from_str::<ItemScores>(json).unwrap_err();
        assert!(err.to_string().contains("missing item B11"), "{err}");
    }

    #[test]
    fn serializes_in_canonical_order() {
        let m = ItemMap::from_fn(|id| id.index() as u8);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(
            json,
            r#"{"A4":0,"A7":1,"A8":2,"B4":3,"B7":4,"B9":5,"B10":6,"B11":7}"#
        );
        assert_eq!(serde_json::from_str::<ItemMap<u8>>(&json).unwrap(), m);
    }
}
