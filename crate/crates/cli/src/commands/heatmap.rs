use std::path::Path;

use anyhow::Context;
use lwinnn::maps::render_heatmap;
use lwinnn::PixelAnomalyMap;

use crate::failure::CmdResult;

/// Renders a pixel map to PNG, optionally blended over `image`.
pub fn heatmap(map_path: &Path, image: Option<&Path>, alpha: f32, out: &Path) -> CmdResult<(u32, u32)> {
    let map = PixelAnomalyMap::read(map_path).with_context(|| format!("reading {}", map_path.display()))?;
    let background = match image {
        Some(p) => Some(image::open(p).with_context(|| format!("decoding {}", p.display()))?.to_rgb8()),
        None => None,
    };
    let rendered = render_heatmap(&map, background.as_ref(), alpha)?;
    rendered.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(rendered.dimensions())
}
