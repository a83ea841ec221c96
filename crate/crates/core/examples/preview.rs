//! Renders a contact sheet of random portraits to `preview.png`.

use hairshift_core::data_synth::{generate_portrait_video, PortraitSpec};
use hairshift_core::frame::Frame;

fn main() {
    let cols = 8;
    let rows = 4;
    let size = 64;
    let mut sheet = Frame::new(rows * size, cols * size);
    for r in 0..rows {
        let spec = PortraitSpec::random(r as u64 + 10, cols);
        let video = generate_portrait_video(&spec, cols).expect("valid spec");
        for (c, f) in video.frames.iter().enumerate() {
            for y in 0..size {
                for x in 0..size {
                    sheet.set(r * size + y, c * size + x, f.get(y, x));
                }
            }
        }
    }
    let out = std::env::args().nth(1).unwrap_or_else(|| "preview.png".into());
    sheet.save_png(std::path::Path::new(&out)).expect("write preview");
}
