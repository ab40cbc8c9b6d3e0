use hotspot::geometry::Rect;
use hotspot::geometry::LayoutClip;
use hotspot::litho::{simulate, LithoConfig};
use hotspot::geometry::RectilinearPolygon;

fn main() {
    for (sigma, theta) in [(30.0, 0.4375), (30.0, 0.435), (30.0, 0.44), (32.0, 0.4375)] {
        let p = LithoConfig {
            sigma_nm: sigma,
            threshold: theta,
            ..LithoConfig::default()
        };
        println!("sigma {sigma} theta {theta}:");
        for width in [65i32, 70, 75, 80, 85] {
            let mut row = format!("  w{width}:");
            for gap in [65i32, 70, 75, 80, 85, 90] {
                let y0 = 560 - width / 2;
                let y0 = y0 - y0.rem_euclid(5);
                let end = 520;
                let clip = LayoutClip::new(
                    "probe",
                    vec![
                        RectilinearPolygon::rect(Rect::new(0, y0, end, y0 + width)),
                        RectilinearPolygon::rect(Rect::new(end + gap, y0, 1110, y0 + width)),
                    ],
                );
                let r = simulate(&clip, &p);
                row.push_str(&format!(
                    " g{gap}:{}",
                    if r.label == hotspot::layout_io::Label::Hotspot { "HS " } else { "nhs" }
                ));
            }
            println!("{row}");
        }
    }
}
