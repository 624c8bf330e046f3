//! Minimal element table: the SMILES organic subset plus the common bracket
//! elements, with default valence lists.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub number: u8,
    pub symbol: &'static str,
    pub valences: &'static [u8],
    /// May be written without brackets.
    pub organic: bool,
    /// May appear as a lowercase aromatic symbol.
    pub aromatic: bool,
}

const fn el(
    number: u8,
    symbol: &'static str,
    valences: &'static [u8],
    organic: bool,
    aromatic: bool,
) -> Element {
    Element {
        number,
        symbol,
        valences,
        organic,
        aromatic,
    }
}

static ELEMENTS: &[Element] = &[
    el(1, "H", &[1], false, false),
    el(2, "He", &[0], false, false),
    el(3, "Li", &[1], false, false),
    el(4, "Be", &[2], false, false),
    el(5, "B", &[3], true, true),
    el(6, "C", &[4], true, true),
    el(7, "N", &[3], true, true),
    el(8, "O", &[2], true, true),
    el(9, "F", &[1], true, false),
    el(10, "Ne", &[0], false, false),
    el(11, "Na", &[1], false, false),
    el(12, "Mg", &[2], false, false),
    el(13, "Al", &[3], false, false),
    el(14, "Si", &[4], false, false),
    el(15, "P", &[3, 5], true, true),
    el(16, "S", &[2, 4, 6], true, true),
    el(17, "Cl", &[1], true, false),
    el(18, "Ar", &[0], false, false),
    el(19, "K", &[1], false, false),
    el(20, "Ca", &[2], false, false),
    el(31, "Ga", &[3], false, false),
    el(32, "Ge", &[4], false, false),
    el(33, "As", &[3, 5], false, true),
    el(34, "Se", &[2, 4, 6], false, true),
    el(35, "Br", &[1], true, false),
    el(36, "Kr", &[0], false, false),
    el(49, "In", &[3], false, false),
    el(50, "Sn", &[4], false, false),
    el(51, "Sb", &[3, 5], false, false),
    el(52, "Te", &[2, 4, 6], false, true),
    el(53, "I", &[1, 3, 5], true, false),
    el(54, "Xe", &[0], false, false),
];

pub fn by_number(number: u8) -> Option<&'static Element> {
    ELEMENTS.iter().find(|e| e.number == number)
}

/// Looks up a capitalized element symbol (`"C"`, `"Cl"`).
pub fn by_symbol(symbol: &str) -> Option<&'static Element> {
    ELEMENTS.iter().find(|e| e.symbol == symbol)
}

/// Looks up a lowercase aromatic symbol (`"c"`, `"se"`).
pub fn by_aromatic_symbol(symbol: &str) -> Option<&'static Element> {
    let mut chars = symbol.chars();
    let first = chars.next()?.to_ascii_uppercase();
    let capitalized: String = std::iter::once(first).chain(chars).collect();
    by_symbol(&capitalized).filter(|e| e.aromatic)
}

/// Allowed valences for an element carrying a formal charge, using the
/// isoelectronic neighbour (`[N+]` behaves like C, `[O-]` like F). `None` when
/// the charge is outside the supported table.
pub fn charged_valences(number: u8, charge: i8) -> Option<&'static [u8]> {
    if charge == 0 {
        return by_number(number).map(|e| e.valences);
    }
    if !(-2..=2).contains(&charge) {
        return None;
    }
    if number == 1 && charge == 1 {
        return Some(&[0]);
    }
    let shifted = i16::from(number) - i16::from(charge);
    let shifted = u8::try_from(shifted).ok().filter(|&z| z > 0)?;
    if period(shifted) != period(number) {
        return None;
    }
    by_number(shifted).map(|e| e.valences)
}

fn period(number: u8) -> u8 {
    match number {
        0..=2 => 1,
        3..=10 => 2,
        11..=18 => 3,
        19..=36 => 4,
        _ => 5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charge_shifts_follow_isoelectronic_neighbour() {
        assert_eq!(charged_valences(7, 1), Some(&[4u8][..]));
        assert_eq!(charged_valences(8, -1), Some(&[1u8][..]));
        assert_eq!(charged_valences(8, 1), Some(&[3u8][..]));
        assert_eq!(charged_valences(6, 0), Some(&[4u8][..]));
        assert_eq!(charged_valences(6, 3), None);
        assert_eq!(charged_valences(3, 2), None);
    }

    #[test]
    fn aromatic_lookup() {
        assert_eq!(by_aromatic_symbol("c").unwrap().number, 6);
        assert_eq!(by_aromatic_symbol("se").unwrap().number, 34);
        assert!(by_aromatic_symbol("f").is_none());
    }
}
