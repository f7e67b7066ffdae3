use relpara::augmentation::{project_label, BinaryLabel, Projected, Variant};

use Projected::{E, NE, U};
use Variant::{EqPara as P1, FwdPara as PF, Orig as O, RevPara as PR};

/// (premise, hypothesis, label when the original entails, label when it does not)
const TABLE: [(Variant, Variant, Projected, Projected); 15] = [
    (P1, O, E, NE),
    (O, P1, E, NE),
    (P1, P1, E, NE),
    (PR, O, E, NE),
    (PR, P1, E, NE),
    (O, PF, E, U),
    (P1, PF, E, U),
    (PR, PF, E, U),
    (PF, P1, U, U),
    (PF, PF, U, U),
    (O, PR, U, U),
    (P1, PR, U, U),
    (PR, PR, U, U),
    (PF, PR, U, U),
    (PF, O, U, U),
];

#[test]
fn all_thirty_cells() {
    let mut checked = 0;
    for (p, h, if_e, if_ne) in TABLE {
        assert_eq!(project_label(BinaryLabel::E, p, h), if_e, "E <{p:?},{h:?}>");
        assert_eq!(project_label(BinaryLabel::NE, p, h), if_ne, "NE <{p:?},{h:?}>");
        checked += 2;
    }
    assert_eq!(checked, 30);
    let mut cells: Vec<(Variant, Variant)> = TABLE.iter().map(|c| (c.0, c.1)).collect();
    cells.push((O, O));
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), 16, "table covers every variant pair");
}

#[test]
fn the_original_pair_keeps_its_label() {
    assert_eq!(project_label(BinaryLabel::E, O, O), E);
    assert_eq!(project_label(BinaryLabel::NE, O, O), NE);
}
