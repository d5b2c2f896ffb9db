//! Font loading and glyph-coverage rasterisation.

use std::path::Path;

use ab_glyph::{point, Font, FontArc, PxScale, ScaleFont};

use crate::error::{FastError, Result};

/// Font used for the style-free reference mask.
pub const FIXED_FONT_ID: &str = "DejaVuSans";

const BUNDLED: [(&str, &[u8]); 6] = [
    ("DejaVuSans", include_bytes!("../../assets/fonts/DejaVuSans.ttf")),
    ("DejaVuSans-Bold", include_bytes!("../../assets/fonts/DejaVuSans-Bold.ttf")),
    ("DejaVuSerif", include_bytes!("../../assets/fonts/DejaVuSerif.ttf")),
    ("DejaVuSerif-Bold", include_bytes!("../../assets/fonts/DejaVuSerif-Bold.ttf")),
    ("DejaVuSansMono", include_bytes!("../../assets/fonts/DejaVuSansMono.ttf")),
    ("DejaVuSansMono-Bold", include_bytes!("../../assets/fonts/DejaVuSansMono-Bold.ttf")),
];

/// Named fonts available for style sampling, plus the fixed reference font.
#[derive(Clone)]
pub struct FontSet {
    fonts: Vec<(String, FontArc)>,
    fixed: FontArc,
}

impl std::fmt::Debug for FontSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FontSet").field("ids", &self.ids().collect::<Vec<_>>()).finish()
    }
}

fn fixed_font() -> FontArc {
    FontArc::try_from_slice(BUNDLED[0].1).expect("bundled font parses")
}

impl FontSet {
    /// The six bundled DejaVu faces.
    pub fn bundled() -> Self {
        let fonts = BUNDLED
            .iter()
            .map(|(id, bytes)| (id.to_string(), FontArc::try_from_slice(bytes).expect("bundled font parses")))
            .collect();
        Self { fonts, fixed: fixed_font() }
    }

    /// A set with no style fonts; only the fixed reference font is available.
    pub fn empty() -> Self {
        Self { fonts: Vec::new(), fixed: fixed_font() }
    }

    /// Loads every `.ttf`/`.otf` file in `dir`, sorted by file name; ids are file stems.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("ttf") || e.eq_ignore_ascii_case("otf"))
            })
            .collect();
        paths.sort();
        let mut set = Self::empty();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let font = FontArc::try_from_vec(std::fs::read(&p)?)
                .map_err(|e| FastError::InsufficientAssets(format!("{}: {e}", p.display())))?;
            set.fonts.push((id, font));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.fonts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fonts.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.fonts.iter().map(|(id, _)| id.as_str())
    }

    pub fn id_at(&self, index: usize) -> &str {
        &self.fonts[index].0
    }

    pub fn get(&self, id: &str) -> Result<&FontArc> {
        self.fonts
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, f)| f)
            .ok_or_else(|| FastError::MissingFont(id.to_string()))
    }

    pub fn fixed(&self) -> &FontArc {
        &self.fixed
    }
}

/// Single-channel glyph coverage in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Coverage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Coverage {
    pub fn ink_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.data[y * self.width + x] > 0.0 {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        b
    }
}

/// Rasterises `text` at `px_height` and centres it on a `height × width`
/// canvas. Fails with [`FastError::GlyphOverflow`] when the laid-out text
/// does not fit.
pub fn rasterize_centered(font: &FontArc, text: &str, px_height: f32, height: usize, width: usize) -> Result<Coverage> {
    let scale = PxScale::from(px_height);
    let scaled = font.as_scaled(scale);
    let mut caret = 0.0f32;
    let mut prev = None;
    let mut glyphs = Vec::with_capacity(text.len());
    for ch in text.chars() {
        let id = scaled.glyph_id(ch);
        if let Some(p) = prev {
            caret += scaled.kern(p, id);
        }
        glyphs.push(id.with_scale_and_position(scale, point(caret, scaled.ascent())));
        caret += scaled.h_advance(id);
        prev = Some(id);
    }
    let outlined: Vec<_> = glyphs.into_iter().filter_map(|g| font.outline_glyph(g)).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
    for g in &outlined {
        let b = g.px_bounds();
        x0 = x0.min(b.min.x);
        y0 = y0.min(b.min.y);
        x1 = x1.max(b.max.x);
        y1 = y1.max(b.max.y);
    }
    if outlined.is_empty() {
        return Err(FastError::GlyphOverflow(format!("`{text}` has no visible glyphs")));
    }
    let (bw, bh) = (x1 - x0, y1 - y0);
    if bw > width as f32 || bh > height as f32 {
        return Err(FastError::GlyphOverflow(format!("`{text}` needs {bw}×{bh} px")));
    }
    let off_x = ((width as f32 - bw) / 2.0 - x0).floor() as i64;
    let off_y = ((height as f32 - bh) / 2.0 - y0).floor() as i64;
    let mut data = vec![0.0f32; height * width];
    for g in &outlined {
        let b = g.px_bounds();
        let (gx, gy) = (b.min.x as i64 + off_x, b.min.y as i64 + off_y);
        g.draw(|x, y, c| {
            let (px, py) = (gx + x as i64, gy + y as i64);
            if px >= 0 && py >= 0 && (px as usize) < width && (py as usize) < height {
                let cell = &mut data[py as usize * width + px as usize];
                *cell = (*cell + c).min(1.0);
            }
        });
    }
    Ok(Coverage { height, width, data })
}

/// Largest integer pixel height, up to `max_px`, at which `text` fits inside
/// the canvas minus `margin` on every side.
pub fn fitting_height(font: &FontArc, text: &str, height: usize, width: usize, margin: usize, max_px: usize) -> Result<usize> {
    let (h, w) = (height - 2 * margin, width - 2 * margin);
    (4..=max_px)
        .rev()
        .find(|&px| rasterize_centered(font, text, px as f32, h, w).is_ok())
        .ok_or_else(|| FastError::GlyphOverflow(format!("`{text}` does not fit at any size")))
}
