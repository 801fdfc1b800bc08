#![allow(clippy::excessive_precision)]

// Frozen output of coupling_mpmath.py (40-digit arithmetic). Regenerate with
// `python3 coupling_mpmath.py` and paste below the imports.

use std::f64::consts::FRAC_PI_2;

/// kr, theta, Re C/A, Im C/A
pub const VALUES: &[(f64, f64, f64, f64)] = &[
    (0.001, FRAC_PI_2, 0.99999980000001071429, 1499999250.0005624999),
    (0.5, FRAC_PI_2, 0.95066552390440929424, 10.774796288638572447),
    (1.0, FRAC_PI_2, 0.8104534588022095761, 1.26220647721184476),
    (2.0, FRAC_PI_2, 0.35542473888426755854, 0.57506913061739822846),
    (2.354, FRAC_PI_2, 0.17908592305678574398, 0.56028317655287277605),
    (3.7, FRAC_PI_2, -0.29203376143932113784, 0.26065570689920600893),
    (5.0, FRAC_PI_2, -0.25915045997519030317, -0.1392301658931974723),
    (7.7, FRAC_PI_2, 0.19313380990108680533, -0.0043740551635945935388),
    (10.0, FRAC_PI_2, -0.093373207903218204074, 0.11644180540451264196),
    (15.3, FRAC_PI_2, 0.032848066333912059042, 0.092151006264418965798),
    (20.0, FRAC_PI_2, 0.069830024301860863841, -0.027106094559185784253),
    (31.4, FRAC_PI_2, 0.00076114895559850383406, -0.047740426298712742956),
    (35.0, FRAC_PI_2, -0.019442267567632357994, 0.038173744569083579787),
    (0.001, 0.0, 0.99999990000000357143, -3000001499.999625),
    (0.5, 0.0, 0.97522218381639941316, -26.81508794861938119),
    (1.0, 0.0, 0.90350603681927036775, -4.1453198720281086722),
    (2.0, 0.0, 0.65309666246998742602, -0.52591800641408287642),
    (2.354, 0.0, 0.54495918557731689022, -0.22139047260631184663),
    (3.7, 0.0, 0.15447065187175588659, 0.1663372605613783812),
    (5.0, 0.0, -0.057053644847502474989, 0.10826302050845918592),
    (7.7, 0.0, -0.001267009200744895647, -0.051007939817433355511),
    (10.0, 0.0, 0.023540082539625464128, 0.018837847913910451759),
    (15.3, 0.0, 0.012096136573472491508, -0.0043155849966236226143),
    (20.0, 0.0, -0.0027182609945775795251, -0.0070001201536372294026),
    (31.4, 0.0, -0.0030438771405059610216, -0.000048431677222551525556),
    (35.0, 0.0, 0.002183163464166058467, 0.0011118427268191341281),
    (0.001, 0.7, 0.99999985849836368084, -1132427260.2627678839),
    (0.5, 0.7, 0.96503076652261127501, -11.214668442869172854),
    (1.0, 0.7, 0.86488768822327076701, -1.9011075992771746327),
    (2.0, 0.7, 0.52955792386386931717, -0.068990256923920774517),
    (2.354, 0.7, 0.39311577086415355936, 0.10301693355928449822),
    (3.7, 0.7, -0.030836015072366590165, 0.20548096530687706755),
    (5.0, 0.7, -0.1409271432831007432, 0.0055492821976140291552),
    (7.7, 0.7, 0.079412524450068496325, -0.031654111558990157422),
    (10.0, 0.7, -0.024980853709978278492, 0.059345093763994434643),
    (15.3, 0.7, 0.020708528348168077933, 0.035719635182915291914),
    (20.0, 0.7, 0.027390469266568041434, -0.015344429843943277788),
    (31.4, 0.7, -0.0014647287995615953384, -0.01984139295545347443),
    (35.0, 0.7, -0.0067917456885026566154, 0.016493140864661924988),
];
pub const RE_ZEROS: &[f64] = &[
    2.7437072699922693826,
    6.1167642644617689336,
    9.3166156285659645079,
    12.48593736819959785,
    15.643866106347758635,
    18.796253353453969692,
    21.945518067980511317,
    25.092847019394173038,
    28.238892111999468072,
    31.384041635112885619,
    34.528541442973131442,
];
pub const IM_ZEROS: &[f64] = &[
    4.4817497806168849022,
    7.7230445817130248467,
    10.90334369740392192,
    14.065832758237345528,
    17.220558791050026216,
    20.371184383389070724,
    23.519375495795590461,
    26.666001446324209698,
    29.811561004603982704,
    32.956361076941360885,
];
