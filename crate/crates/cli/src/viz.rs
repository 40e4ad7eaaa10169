use alikekit::imageio::Image;

const LINE_COLOR: [u8; 3] = [0, 255, 0];

/// RGB canvas of width `W_A + W_B` and height `max(H_A, H_B)` with `a` on the
/// left, `b` on the right and a 1 px line per `(p_a, p_b)` pair.
pub fn side_by_side(a: &Image, b: &Image, lines: &[([f64; 2], [f64; 2])]) -> Image {
    let (w, h) = (a.width() + b.width(), a.height().max(b.height()));
    let mut canvas = Image::filled(w, h, 3, 0);
    for (img, x0) in [(a, 0), (b, a.width())] {
        for y in 0..img.height() {
            for x in 0..img.width() {
                let src = img.pixel(x, y);
                let rgb = if src.len() == 1 {
                    [src[0]; 3]
                } else {
                    [src[0], src[1], src[2]]
                };
                canvas.pixel_mut(x0 + x, y).copy_from_slice(&rgb);
            }
        }
    }
    let offset = a.width() as f64;
    for &(p, q) in lines {
        draw_line(&mut canvas, p, [q[0] + offset, q[1]]);
    }
    canvas
}

/// Bresenham between the rounded endpoints, clipped to the canvas.
fn draw_line(img: &mut Image, p: [f64; 2], q: [f64; 2]) {
    let (mut x0, mut y0) = (p[0].round() as i64, p[1].round() as i64);
    let (x1, y1) = (q[0].round() as i64, q[1].round() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as usize) < img.width() && (y0 as usize) < img.height() {
            img.pixel_mut(x0 as usize, y0 as usize).copy_from_slice(&LINE_COLOR);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canvas_layout_and_line() {
        let a = Image::filled(4, 3, 1, 10);
        let b = Image::filled(5, 6, 3, 20);
        let out = side_by_side(&a, &b, &[([0.0, 0.0], [4.0, 0.0])]);
        assert_eq!((out.width(), out.height(), out.channels()), (9, 6, 3));
        assert_eq!(out.pixel(1, 2), &[10, 10, 10]);
        assert_eq!(out.pixel(1, 4), &[0, 0, 0]);
        assert_eq!(out.pixel(6, 5), &[20, 20, 20]);
        for x in 0..9 {
            assert_eq!(out.pixel(x, 0), &LINE_COLOR);
        }
    }
}
