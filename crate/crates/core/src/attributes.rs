//! Attribute vocabulary, curation of the 40 binary labels into the 23
//! texture/color attributes, and mismatched-pair sampling.

use alloc::string::ToString;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{invalid, Error, Result};

/// The 40 binary attributes in the standard annotation order.
pub const ALL_ATTRIBUTES: [&str; 40] = [
    "5_o_Clock_Shadow",
    "Arched_Eyebrows",
    "Attractive",
    "Bags_Under_Eyes",
    "Bald",
    "Bangs",
    "Big_Lips",
    "Big_Nose",
    "Black_Hair",
    "Blond_Hair",
    "Blurry",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Chubby",
    "Double_Chin",
    "Eyeglasses",
    "Goatee",
    "Gray_Hair",
    "Heavy_Makeup",
    "High_Cheekbones",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "Narrow_Eyes",
    "No_Beard",
    "Oval_Face",
    "Pale_Skin",
    "Pointy_Nose",
    "Receding_Hairline",
    "Rosy_Cheeks",
    "Sideburns",
    "Smiling",
    "Straight_Hair",
    "Wavy_Hair",
    "Wearing_Earrings",
    "Wearing_Hat",
    "Wearing_Lipstick",
    "Wearing_Necklace",
    "Wearing_Necktie",
    "Young",
];

/// Texture attributes; these condition the sketch generator.
pub const TEXTURE_ATTRIBUTES: [&str; 17] = [
    "5_o_Clock_Shadow",
    "Arched_Eyebrows",
    "Bags_Under_Eyes",
    "Bald",
    "Bangs",
    "Big_Lips",
    "Big_Nose",
    "Bushy_Eyebrows",
    "Chubby",
    "Eyeglasses",
    "Male",
    "Mouth_Slightly_Open",
    "Narrow_Eyes",
    "No_Beard",
    "Oval_Face",
    "Smiling",
    "Young",
];

pub const COLOR_ATTRIBUTES: [&str; 6] =
    ["Black_Hair", "Blond_Hair", "Brown_Hair", "Gray_Hair", "Pale_Skin", "Rosy_Cheeks"];

pub const SKETCH_ATTRS: usize = 17;
pub const FACE_ATTRS: usize = 23;

/// Progression weights used to sweep one attribute.
pub const PROGRESSION_WEIGHTS: [f64; 6] = [-1.0, -0.1, 0.1, 0.4, 0.7, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttributeGroup {
    Texture,
    Color,
}

/// The 23 curated names: texture block then color block.
pub fn curated_names() -> impl Iterator<Item = &'static str> {
    TEXTURE_ATTRIBUTES.iter().chain(COLOR_ATTRIBUTES.iter()).copied()
}

pub fn curated_name(index: usize) -> Option<&'static str> {
    curated_names().nth(index)
}

pub fn group_of(index: usize) -> Option<AttributeGroup> {
    match index {
        i if i < SKETCH_ATTRS => Some(AttributeGroup::Texture),
        i if i < FACE_ATTRS => Some(AttributeGroup::Color),
        _ => None,
    }
}

/// Case-insensitive lookup of a curated attribute.
pub fn curated_index(name: &str) -> Result<usize> {
    curated_names()
        .position(|n| n.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
}

/// Column layout of a 40-attribute table header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeSchema {
    /// Header column holding each curated attribute, in curated order.
    columns: [usize; FACE_ATTRS],
    width: usize,
}

impl AttributeSchema {
    /// The standard 40-name order.
    pub fn standard() -> Self {
        let names: Vec<&str> = ALL_ATTRIBUTES.to_vec();
        Self::from_header(&names).expect("standard header is valid")
    }

    /// Every header name must be one of the 40 known attributes and all 23
    /// curated attributes must be present.
    pub fn from_header<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        for h in header {
            let h = h.as_ref();
            if !ALL_ATTRIBUTES.contains(&h) {
                return Err(Error::UnknownAttribute(h.to_string()));
            }
        }
        let mut columns = [0usize; FACE_ATTRS];
        for (slot, name) in columns.iter_mut().zip(curated_names()) {
            *slot = header
                .iter()
                .position(|h| h.as_ref() == name)
                .ok_or_else(|| Error::MissingAttribute(name.to_string()))?;
        }
        Ok(Self { columns, width: header.len() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Splits a row of ±1 labels into `(y_s, y_f)`; `y_s` is the first 17
    /// entries of `y_f`.
    pub fn curate(&self, row: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if row.len() != self.width {
            return Err(invalid!("attribute row has {} values, header has {}", row.len(), self.width));
        }
        if let Some(v) = row.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(invalid!("attribute value {} is not -1 or +1", v));
        }
        let y_f: Vec<f64> = self.columns.iter().map(|&c| row[c]).collect();
        let y_s = y_f[..SKETCH_ATTRS].to_vec();
        Ok((y_s, y_f))
    }
}

/// Curates a row in the standard 40-name order.
pub fn curate_attributes(a40: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    AttributeSchema::standard().curate(a40)
}

/// Attribute vector with `overrides` applied to a base, values clamped to [-1, 1].
pub fn compose(base: &[f64], overrides: &[(&str, f64)]) -> Result<Vec<f64>> {
    if base.len() != FACE_ATTRS {
        return Err(invalid!("base vector has {} values, expected {}", base.len(), FACE_ATTRS));
    }
    let mut v: Vec<f64> = base.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    for (name, value) in overrides {
        if !value.is_finite() {
            return Err(invalid!("attribute {} has non-finite weight", name));
        }
        v[curated_index(name)?] = value.clamp(-1.0, 1.0);
    }
    Ok(v)
}

/// Picks uniformly among `candidates` whose attribute vector differs from
/// `query` in at least one coordinate; returns its index.
pub fn sample_mismatch<R: Rng + ?Sized, V: AsRef<[f64]>>(candidates: &[V], query: &[f64], rng: &mut R) -> Result<usize> {
    let pool: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.as_ref() != query)
        .map(|(i, _)| i)
        .collect();
    if pool.is_empty() {
        return Err(Error::NoMismatch);
    }
    Ok(pool[rng.random_range(0..pool.len())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn curated_lists_are_subsets_in_order() {
        assert_eq!(curated_names().count(), 23);
        for n in curated_names() {
            assert!(ALL_ATTRIBUTES.contains(&n), "{n}");
        }
        assert_eq!(curated_name(0), Some("5_o_Clock_Shadow"));
        assert_eq!(curated_name(16), Some("Young"));
        assert_eq!(curated_name(17), Some("Black_Hair"));
        assert_eq!(group_of(16), Some(AttributeGroup::Texture));
        assert_eq!(group_of(22), Some(AttributeGroup::Color));
        assert_eq!(group_of(23), None);
    }

    #[test]
    fn all_positive_row() {
        let (ys, yf) = curate_attributes(&[1.0; 40]).unwrap();
        assert_eq!(ys, alloc::vec![1.0; 17]);
        assert_eq!(yf, alloc::vec![1.0; 23]);
    }

    #[test]
    fn signed_entries_land_at_their_positions() {
        let mut row = [1.0; 40];
        for name in ["Eyeglasses", "Male", "Mouth_Slightly_Open", "Oval_Face", "Smiling", "Black_Hair"] {
            row[ALL_ATTRIBUTES.iter().position(|n| *n == name).unwrap()] = -1.0;
        }
        let (_, yf) = curate_attributes(&row).unwrap();
        for (i, name) in curated_names().enumerate() {
            let expect = if ["Eyeglasses", "Male", "Mouth_Slightly_Open", "Oval_Face", "Smiling", "Black_Hair"]
                .contains(&name)
            {
                -1.0
            } else {
                1.0
            };
            assert_eq!(yf[i], expect, "{name}");
        }
        assert_eq!(yf[curated_index("no_beard").unwrap()], 1.0);
    }

    #[test]
    fn color_toggle_leaves_sketch_slice() {
        let mut row = [-1.0; 40];
        let (ys0, yf0) = curate_attributes(&row).unwrap();
        row[8] = 1.0; // Black_Hair
        let (ys1, yf1) = curate_attributes(&row).unwrap();
        assert_eq!(ys0, ys1);
        assert_ne!(yf0, yf1);
    }

    #[test]
    fn header_validation() {
        let mut header: Vec<&str> = ALL_ATTRIBUTES.to_vec();
        header[2] = "Sparkly";
        assert_eq!(AttributeSchema::from_header(&header), Err(Error::UnknownAttribute("Sparkly".into())));
        let short: Vec<&str> = ALL_ATTRIBUTES[..39].to_vec();
        assert_eq!(AttributeSchema::from_header(&short), Err(Error::MissingAttribute("Young".into())));
        // reordered header still resolves by name
        let mut rev: Vec<&str> = ALL_ATTRIBUTES.to_vec();
        rev.reverse();
        let s = AttributeSchema::from_header(&rev).unwrap();
        let mut row = [-1.0; 40];
        row[0] = 1.0; // Young in reversed order
        let (ys, _) = s.curate(&row).unwrap();
        assert_eq!(ys[16], 1.0);
        assert!(s.curate(&[0.5; 40]).is_err());
    }

    #[test]
    fn mismatch_two_samples() {
        let data = [alloc::vec![1.0, -1.0], alloc::vec![-1.0, -1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(sample_mismatch(&data, &data[0], &mut rng).unwrap(), 1);
        }
        let same = [alloc::vec![1.0], alloc::vec![1.0]];
        assert_eq!(sample_mismatch(&same, &[1.0], &mut rng), Err(Error::NoMismatch));
    }

    #[test]
    fn compose_overrides() {
        let v = compose(&[-1.0; 23], &[("smiling", 1.0), ("Male", 3.0)]).unwrap();
        assert_eq!(v[curated_index("Smiling").unwrap()], 1.0);
        assert_eq!(v[curated_index("Male").unwrap()], 1.0);
        assert!(compose(&[-1.0; 23], &[("Wings", 1.0)]).is_err());
    }
}
