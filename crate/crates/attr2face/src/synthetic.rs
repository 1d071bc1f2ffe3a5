//! Procedural face-like dataset whose pixels depend on the curated
//! attributes, for smoke runs and tests that need learnable structure
//! without external data.

use std::path::Path;

use attr2face_core::attributes::ALL_ATTRIBUTES;
use attr2face_core::data::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{encode_png, Split, ATTRIBUTES_FILE, IMAGES_DIR, SPLITS_FILE};
use crate::error::{io_err, Result};

/// Rendered canvas: taller than wide so loading exercises the center crop.
pub const HEIGHT: usize = 72;
pub const WIDTH: usize = 64;

const HAIR_COLORS: [(&str, [f64; 3]); 4] = [
    ("Black_Hair", [0.08, 0.07, 0.07]),
    ("Blond_Hair", [0.92, 0.80, 0.45]),
    ("Brown_Hair", [0.45, 0.28, 0.15]),
    ("Gray_Hair", [0.68, 0.68, 0.70]),
];
const OTHER_HAIR: [f64; 3] = [0.60, 0.22, 0.12];

fn attr_index(name: &str) -> usize {
    ALL_ATTRIBUTES.iter().position(|n| *n == name).expect("known attribute")
}

/// Attribute row with consistent hair labels (at most one color, none when bald).
pub fn sample_attributes<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let mut a: Vec<f64> = (0..ALL_ATTRIBUTES.len()).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let bald = rng.random_bool(0.15);
    a[attr_index("Bald")] = if bald { 1.0 } else { -1.0 };
    let hair = if bald { None } else { Some(rng.random_range(0..=HAIR_COLORS.len())) };
    for (k, (name, _)) in HAIR_COLORS.iter().enumerate() {
        a[attr_index(name)] = if hair == Some(k) { 1.0 } else { -1.0 };
    }
    if bald {
        a[attr_index("Bangs")] = -1.0;
    }
    a
}

struct Canvas {
    img: Image,
}

impl Canvas {
    fn new(bg: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(HEIGHT * WIDTH * 3);
        for _ in 0..HEIGHT * WIDTH {
            data.extend_from_slice(&bg);
        }
        Self { img: Image::new(HEIGHT, WIDTH, 3, data).expect("canvas size") }
    }

    fn put(&mut self, y: i64, x: i64, color: [f64; 3], alpha: f64) {
        if y < 0 || x < 0 || y >= HEIGHT as i64 || x >= WIDTH as i64 {
            return;
        }
        let o = (y as usize * WIDTH + x as usize) * 3;
        for c in 0..3 {
            let p = &mut self.img.data[o + c];
            *p = (1.0 - alpha) * *p + alpha * color[c];
        }
    }

    fn ellipse(&mut self, cy: f64, cx: f64, ry: f64, rx: f64, color: [f64; 3], alpha: f64, keep: impl Fn(f64, f64) -> bool) {
        for y in (cy - ry).floor() as i64..=(cy + ry).ceil() as i64 {
            for x in (cx - rx).floor() as i64..=(cx + rx).ceil() as i64 {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 && keep(dy, dx) {
                    self.put(y, x, color, alpha);
                }
            }
        }
    }

    fn rect(&mut self, y0: f64, x0: f64, y1: f64, x1: f64, color: [f64; 3], alpha: f64) {
        for y in y0.round() as i64..y1.round() as i64 {
            for x in x0.round() as i64..x1.round() as i64 {
                self.put(y, x, color, alpha);
            }
        }
    }
}

/// Renders a `[0,1]` RGB face for a 40-attribute row (standard order).
pub fn render<R: Rng + ?Sized>(a: &[f64], rng: &mut R) -> Image {
    let on = |name: &str| a[attr_index(name)] > 0.0;
    let jitter = |rng: &mut R| rng.random_range(-1.0..1.0);
    let bg = [rng.random_range(0.2..0.5), rng.random_range(0.3..0.6), rng.random_range(0.4..0.7)];
    let mut cv = Canvas::new(bg);
    let cy = HEIGHT as f64 / 2.0 + 2.0 + jitter(rng);
    let cx = WIDTH as f64 / 2.0 + jitter(rng);
    let mut rx = if on("Male") { 17.0 } else { 15.0 };
    let mut ry = if on("Oval_Face") { 23.0 } else { 20.0 };
    if on("Chubby") {
        rx += 3.0;
        ry -= 1.0;
    }
    let skin = if on("Pale_Skin") { [0.96, 0.88, 0.82] } else { [0.80, 0.60, 0.45] };
    let hair = HAIR_COLORS.iter().find(|(n, _)| on(n)).map(|(_, c)| *c).unwrap_or(OTHER_HAIR);
    let bald = on("Bald");

    if !bald {
        // hair mass behind the face
        cv.ellipse(cy - 3.0, cx, ry + 4.0, rx + 4.0, hair, 1.0, |dy, _| dy < 0.35);
    }
    cv.ellipse(cy, cx, ry, rx, skin, 1.0, |_, _| true);
    if !bald && on("Bangs") {
        cv.rect(cy - ry, cx - rx + 1.0, cy - ry + 9.0, cx + rx - 1.0, hair, 1.0);
    } else if !bald {
        cv.ellipse(cy - ry + 2.0, cx, 4.0, rx - 2.0, hair, 1.0, |dy, _| dy < 0.0);
    }
    if !on("Young") {
        for k in 0..2 {
            let y = cy - ry + 11.0 + 2.0 * k as f64;
            cv.rect(y, cx - 6.0, y + 1.0, cx + 6.0, [0.35, 0.25, 0.2], 0.5);
        }
    }
    if on("Rosy_Cheeks") {
        for s in [-1.0, 1.0] {
            cv.ellipse(cy + 4.0, cx + s * (rx - 5.0), 3.0, 3.0, [0.9, 0.35, 0.4], 0.7, |_, _| true);
        }
    }
    // lower face hair
    if !on("No_Beard") {
        cv.ellipse(cy + 4.0, cx, ry - 4.0, rx - 1.0, hair, 0.9, |dy, _| dy > 0.35);
    } else if on("5_o_Clock_Shadow") {
        cv.ellipse(cy + 4.0, cx, ry - 4.0, rx - 1.0, [0.3, 0.3, 0.3], 0.35, |dy, _| dy > 0.35);
    }
    // eyes, brows, bags
    let eye_y = cy - 3.0;
    let eye_h = if on("Narrow_Eyes") { 0.8 } else { 1.8 };
    let brow_h = if on("Bushy_Eyebrows") { 2.5 } else { 1.0 };
    for s in [-1.0, 1.0] {
        let ex = cx + s * 6.0;
        cv.ellipse(eye_y, ex, eye_h, 2.6, [0.98, 0.98, 0.98], 1.0, |_, _| true);
        cv.ellipse(eye_y, ex, eye_h.min(1.2), 1.2, [0.1, 0.1, 0.15], 1.0, |_, _| true);
        let lift = if on("Arched_Eyebrows") { 1.5 } else { 0.0 };
        cv.rect(eye_y - 4.5 - lift, ex - 3.0, eye_y - 4.5 - lift + brow_h, ex + 3.0, [0.15, 0.1, 0.08], 1.0);
        if on("Arched_Eyebrows") {
            cv.rect(eye_y - 4.0, ex - 3.5, eye_y - 3.0, ex - 2.0, [0.15, 0.1, 0.08], 1.0);
            cv.rect(eye_y - 4.0, ex + 2.0, eye_y - 3.0, ex + 3.5, [0.15, 0.1, 0.08], 1.0);
        }
        if on("Bags_Under_Eyes") {
            cv.rect(eye_y + 2.0, ex - 2.5, eye_y + 3.0, ex + 2.5, [0.45, 0.3, 0.35], 0.6);
        }
        if on("Eyeglasses") {
            let c = [0.05, 0.05, 0.05];
            cv.rect(eye_y - 3.0, ex - 4.0, eye_y - 2.0, ex + 4.0, c, 1.0);
            cv.rect(eye_y + 2.0, ex - 4.0, eye_y + 3.0, ex + 4.0, c, 1.0);
            cv.rect(eye_y - 3.0, ex - 4.0, eye_y + 3.0, ex - 3.0, c, 1.0);
            cv.rect(eye_y - 3.0, ex + 3.0, eye_y + 3.0, ex + 4.0, c, 1.0);
        }
    }
    if on("Eyeglasses") {
        cv.rect(eye_y - 1.0, cx - 2.0, eye_y, cx + 2.0, [0.05, 0.05, 0.05], 1.0);
    }
    // nose
    let nose = if on("Big_Nose") { 2.5 } else { 1.2 };
    cv.ellipse(cy + 3.0, cx, nose + 1.0, nose, [0.55, 0.38, 0.3], 0.8, |_, _| true);
    // mouth
    let mouth_y = cy + 10.0;
    let half = if on("Smiling") { 7.0 } else { 4.5 };
    let lip = if on("Big_Lips") { 2.0 } else { 1.0 };
    let lip_color = [0.7, 0.2, 0.25];
    for x in (cx - half).round() as i64..(cx + half).round() as i64 {
        let t = (x as f64 + 0.5 - cx) / half;
        let curve = if on("Smiling") { -2.5 * t * t } else { 0.0 };
        let y0 = mouth_y + curve;
        cv.rect(y0, x as f64, y0 + lip, x as f64 + 1.0, lip_color, 1.0);
        if on("Mouth_Slightly_Open") && t.abs() < 0.7 {
            cv.rect(y0 + lip, x as f64, y0 + lip + 1.5, x as f64 + 1.0, [0.15, 0.02, 0.05], 1.0);
        }
    }
    for v in &mut cv.img.data {
        *v = (*v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0);
    }
    cv.img
}

/// `n` rendered samples from `seed`: `(image in [0,1], 40 labels)`.
pub fn generate(n: usize, seed: u64) -> Vec<(Image, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = sample_attributes(&mut rng);
            let img = render(&a, &mut rng);
            (img, a)
        })
        .collect()
}

/// Split of the `i`-th generated sample: a fixed 7:1:2 cycle.
pub fn split_of(i: usize) -> Split {
    match i % 10 {
        0..=6 => Split::Train,
        7 => Split::Val,
        _ => Split::Test,
    }
}

/// Writes a dataset in the standard on-disk layout. With `all_train`
/// every sample goes to the training split.
pub fn write_dataset(root: &Path, n: usize, seed: u64, all_train: bool) -> Result<()> {
    let images = root.join(IMAGES_DIR);
    std::fs::create_dir_all(&images).map_err(io_err(&images))?;
    let attr_path = root.join(ATTRIBUTES_FILE);
    let split_path = root.join(SPLITS_FILE);
    let mut attrs = String::from("filename");
    for name in ALL_ATTRIBUTES {
        attrs.push(',');
        attrs.push_str(name);
    }
    attrs.push('\n');
    let mut splits = String::from("filename,split,identity\n");
    for (i, (img, a)) in generate(n, seed).into_iter().enumerate() {
        let name = format!("{i:06}.png");
        let path = images.join(&name);
        std::fs::write(&path, encode_png(&img)?).map_err(io_err(&path))?;
        attrs.push_str(&name);
        for v in a {
            attrs.push_str(if v > 0.0 { ",1" } else { ",-1" });
        }
        attrs.push('\n');
        let split = if all_train { Split::Train } else { split_of(i) };
        splits.push_str(&format!("{name},{split},id{i:06}\n"));
    }
    std::fs::write(&attr_path, attrs).map_err(io_err(&attr_path))?;
    std::fs::write(&split_path, splits).map_err(io_err(&split_path))?;
    Ok(())
}
