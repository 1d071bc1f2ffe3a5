//! Dataset layout on disk: `images/`, `attributes.csv` and `splits.csv`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use attr2face_core::attributes::{AttributeSchema, ALL_ATTRIBUTES};
use attr2face_core::data::{curate_sample, CuratedSample, Image};

use crate::error::{format_err, io_err, Error, Result};

pub const IMAGES_DIR: &str = "images";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const SPLITS_FILE: &str = "splits.csv";
const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "0" => Ok(Split::Train),
            "val" | "valid" | "validation" | "1" => Ok(Split::Val),
            "test" | "2" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, val or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One image with its 40 labels in the standard attribute order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub image_path: PathBuf,
    pub attributes_40: Vec<f64>,
    pub split: Split,
    pub identity_id: String,
}

fn read_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(file))
}

fn parse_label(path: &Path, column: &str, raw: &str) -> Result<f64> {
    match raw {
        "1" | "+1" | "1.0" => Ok(1.0),
        "-1" | "-1.0" => Ok(-1.0),
        _ => Err(Error::MalformedAttribute { path: path.to_path_buf(), column: column.to_string(), value: raw.to_string() }),
    }
}

/// Reads `attributes.csv`: a key column followed by the 40 attribute names
/// in any order. Rows are returned in the standard order, keyed by file name.
pub fn read_attribute_table(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let mut reader = read_csv(path)?;
    let header = reader.headers().map_err(|e| format_err(path, e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().skip(1).collect();
    for n in &names {
        if !ALL_ATTRIBUTES.contains(n) {
            return Err(Error::Core(attr2face_core::Error::UnknownAttribute(n.to_string())));
        }
    }
    let mut order = Vec::with_capacity(ALL_ATTRIBUTES.len());
    for want in ALL_ATTRIBUTES {
        let col = names
            .iter()
            .position(|n| *n == want)
            .ok_or_else(|| attr2face_core::Error::MissingAttribute(want.to_string()))?;
        order.push(col);
    }
    if names.len() != ALL_ATTRIBUTES.len() {
        return Err(format_err(path, format!("expected 40 attribute columns, found {}", names.len())));
    }
    let mut rows = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let key = record.get(0).unwrap_or_default().to_string();
        let values: Vec<f64> = order
            .iter()
            .map(|&c| parse_label(path, names[c], record.get(c + 1).unwrap_or_default()))
            .collect::<Result<_>>()?;
        if rows.insert(key.clone(), values).is_some() {
            return Err(format_err(path, format!("duplicate row for {key}")));
        }
    }
    Ok(rows)
}

/// Reads `splits.csv`: `filename,split[,identity]`.
pub fn read_split_table(path: &Path) -> Result<HashMap<String, (Split, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(std::fs::File::open(path).map_err(io_err(path))?);
    let mut rows = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let (Some(name), Some(split)) = (record.get(0), record.get(1)) else {
            return Err(format_err(path, "each row needs a file name and a split"));
        };
        let split = split.parse::<Split>().map_err(|e| format_err(path, e))?;
        let identity = record.get(2).unwrap_or_default().to_string();
        rows.insert(name.to_string(), (split, identity));
    }
    Ok(rows)
}

/// Image files under `root/images`, sorted lexicographically.
pub fn list_images(root: &Path) -> Result<Vec<PathBuf>> {
    let dir = root.join(IMAGES_DIR);
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
        let path = entry.map_err(io_err(&dir))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// All samples of `split`, in lexicographic path order. Every image must
/// have an attribute row and a split assignment.
pub fn load_manifest(root: &Path, split: Split) -> Result<Vec<RawSample>> {
    let attributes = read_attribute_table(&root.join(ATTRIBUTES_FILE))?;
    let splits = read_split_table(&root.join(SPLITS_FILE))?;
    let mut out = Vec::new();
    for path in list_images(root)? {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let row = attributes.get(&name).ok_or_else(|| Error::MissingAttributes(path.clone()))?;
        let (s, identity) = splits.get(&name).ok_or_else(|| Error::MissingSplit(path.clone()))?;
        if *s == split {
            out.push(RawSample { image_path: path, attributes_40: row.clone(), split: *s, identity_id: identity.clone() });
        }
    }
    Ok(out)
}

/// Decodes an image file as RGB in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Image::from_u8(h as usize, w as usize, 3, rgb.as_raw())?)
}

/// Writes a `[0, 1]` RGB image as PNG bytes.
pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    if image.channels != 3 {
        return Err(Error::Config(format!("PNG export needs 3 channels, got {}", image.channels)));
    }
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, image.to_u8())
        .ok_or_else(|| Error::Config("image buffer size mismatch".into()))?;
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: PathBuf::from("<memory>"), message: e.to_string() })?;
    Ok(bytes)
}

/// Loads and curates every sample of `split`.
pub fn prepare(root: &Path, split: Split, scales: &[usize]) -> Result<Vec<CuratedSample>> {
    let schema = AttributeSchema::standard();
    load_manifest(root, split)?
        .iter()
        .map(|s| {
            let face = load_image(&s.image_path)?;
            curate_sample(&face, &s.attributes_40, &schema, scales).map_err(Error::from)
        })
        .collect()
}
