// 3×5 bitmap glyphs, one row per 3-bit group, top row in the high bits.
const fn glyph(rows: [u8; 5]) -> u16 {
    ((rows[0] as u16) << 12)
        | ((rows[1] as u16) << 9)
        | ((rows[2] as u16) << 6)
        | ((rows[3] as u16) << 3)
        | rows[4] as u16
}

pub const GLYPH_W: u32 = 3;
pub const GLYPH_H: u32 = 5;

pub fn bitmap(c: char) -> u16 {
    match c.to_ascii_uppercase() {
        'A' => glyph([0b010, 0b101, 0b111, 0b101, 0b101]),
        'B' => glyph([0b110, 0b101, 0b110, 0b101, 0b110]),
        'C' => glyph([0b011, 0b100, 0b100, 0b100, 0b011]),
        'D' => glyph([0b110, 0b101, 0b101, 0b101, 0b110]),
        'E' => glyph([0b111, 0b100, 0b110, 0b100, 0b111]),
        'F' => glyph([0b111, 0b100, 0b110, 0b100, 0b100]),
        'G' => glyph([0b011, 0b100, 0b101, 0b101, 0b011]),
        'H' => glyph([0b101, 0b101, 0b111, 0b101, 0b101]),
        'I' => glyph([0b111, 0b010, 0b010, 0b010, 0b111]),
        'J' => glyph([0b001, 0b001, 0b001, 0b101, 0b010]),
        'K' => glyph([0b101, 0b101, 0b110, 0b101, 0b101]),
        'L' => glyph([0b100, 0b100, 0b100, 0b100, 0b111]),
        'M' => glyph([0b101, 0b111, 0b111, 0b101, 0b101]),
        'N' => glyph([0b110, 0b101, 0b101, 0b101, 0b101]),
        'O' => glyph([0b010, 0b101, 0b101, 0b101, 0b010]),
        'P' => glyph([0b110, 0b101, 0b110, 0b100, 0b100]),
        'Q' => glyph([0b010, 0b101, 0b101, 0b110, 0b011]),
        'R' => glyph([0b110, 0b101, 0b110, 0b101, 0b101]),
        'S' => glyph([0b011, 0b100, 0b010, 0b001, 0b110]),
        'T' => glyph([0b111, 0b010, 0b010, 0b010, 0b010]),
        'U' => glyph([0b101, 0b101, 0b101, 0b101, 0b111]),
        'V' => glyph([0b101, 0b101, 0b101, 0b101, 0b010]),
        'W' => glyph([0b101, 0b101, 0b111, 0b111, 0b101]),
        'X' => glyph([0b101, 0b101, 0b010, 0b101, 0b101]),
        'Y' => glyph([0b101, 0b101, 0b010, 0b010, 0b010]),
        'Z' => glyph([0b111, 0b001, 0b010, 0b100, 0b111]),
        '0' => glyph([0b111, 0b101, 0b101, 0b101, 0b111]),
        '1' => glyph([0b010, 0b110, 0b010, 0b010, 0b111]),
        '2' => glyph([0b110, 0b001, 0b010, 0b100, 0b111]),
        '3' => glyph([0b110, 0b001, 0b010, 0b001, 0b110]),
        '4' => glyph([0b101, 0b101, 0b111, 0b001, 0b001]),
        '5' => glyph([0b111, 0b100, 0b110, 0b001, 0b110]),
        '6' => glyph([0b011, 0b100, 0b111, 0b101, 0b111]),
        '7' => glyph([0b111, 0b001, 0b010, 0b100, 0b100]),
        '8' => glyph([0b111, 0b101, 0b111, 0b101, 0b111]),
        '9' => glyph([0b111, 0b101, 0b111, 0b001, 0b110]),
        '_' => glyph([0b000, 0b000, 0b000, 0b000, 0b111]),
        '-' => glyph([0b000, 0b000, 0b111, 0b000, 0b000]),
        '.' => glyph([0b000, 0b000, 0b000, 0b000, 0b010]),
        _ => 0,
    }
}

pub fn is_set(bits: u16, col: u32, row: u32) -> bool {
    let shift = (GLYPH_H - 1 - row) * GLYPH_W + (GLYPH_W - 1 - col);
    bits >> shift & 1 == 1
}
