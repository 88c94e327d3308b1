//! Seeded stand-in for the public 22-crop recommendation table.
//!
//! Each crop draws every feature uniformly from a fixed range. The ranges
//! follow the per-crop value ranges of the public dataset (N, P, K in
//! kg/ha as integers; temperature in °C; relative humidity in %; soil pH;
//! rainfall in mm), so class overlap (rice/jute, the pulses, ...) is of the
//! same kind as in the original.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;

/// The 22 crop labels in lexicographic order.
pub const CROP_CLASSES: [&str; 22] = [
    "apple",
    "banana",
    "blackgram",
    "chickpea",
    "coconut",
    "coffee",
    "cotton",
    "grapes",
    "jute",
    "kidneybeans",
    "lentil",
    "maize",
    "mango",
    "mothbeans",
    "mungbean",
    "muskmelon",
    "orange",
    "papaya",
    "pigeonpeas",
    "pomegranate",
    "rice",
    "watermelon",
];

type Range = (f64, f64);

/// (N, P, K, temperature, humidity, ph, rainfall) ranges per crop.
fn profile(crop: &str) -> [Range; 7] {
    match crop {
        "rice" => [(60., 99.), (35., 60.), (35., 45.), (20.0, 26.9), (80.1, 85.0), (5.0, 7.9), (182.6, 298.6)],
        "maize" => [(60., 100.), (35., 60.), (15., 25.), (18.0, 26.5), (55.3, 74.8), (5.5, 7.0), (60.6, 109.8)],
        "chickpea" => [(20., 60.), (55., 80.), (75., 85.), (17.0, 21.0), (14.3, 20.0), (6.0, 8.9), (65.1, 95.0)],
        "kidneybeans" => [(0., 40.), (55., 80.), (15., 25.), (15.3, 25.0), (18.1, 25.0), (5.5, 6.0), (60.3, 150.0)],
        "pigeonpeas" => [(0., 40.), (55., 80.), (15., 25.), (18.3, 37.0), (30.4, 69.7), (4.5, 7.4), (90.1, 198.8)],
        "mothbeans" => [(0., 40.), (35., 60.), (15., 25.), (24.0, 32.0), (40.0, 65.0), (3.5, 9.9), (30.9, 74.4)],
        "mungbean" => [(0., 40.), (35., 60.), (15., 25.), (27.0, 30.0), (80.0, 90.0), (6.2, 7.2), (36.1, 59.9)],
        "blackgram" => [(20., 60.), (55., 80.), (15., 25.), (25.1, 35.0), (60.1, 70.0), (6.5, 7.8), (60.4, 75.0)],
        "lentil" => [(0., 40.), (55., 80.), (15., 25.), (18.1, 30.0), (60.1, 70.0), (5.9, 7.8), (35.0, 54.9)],
        "pomegranate" => [(0., 40.), (5., 30.), (35., 45.), (18.1, 25.0), (85.1, 95.0), (5.6, 7.2), (102.5, 112.5)],
        "banana" => [(80., 120.), (70., 95.), (45., 55.), (25.0, 30.0), (75.0, 85.0), (5.5, 6.5), (90.1, 120.0)],
        "mango" => [(0., 40.), (15., 40.), (25., 35.), (27.0, 35.9), (45.0, 55.0), (4.5, 7.0), (89.3, 101.0)],
        "grapes" => [(0., 40.), (120., 145.), (195., 205.), (8.8, 41.9), (80.0, 84.0), (5.5, 6.5), (65.0, 75.0)],
        "watermelon" => [(80., 120.), (5., 30.), (45., 55.), (24.0, 27.0), (80.0, 90.0), (6.0, 7.0), (40.1, 59.8)],
        "muskmelon" => [(80., 120.), (5., 30.), (45., 55.), (27.0, 30.0), (90.0, 95.0), (6.0, 6.8), (20.2, 30.0)],
        "apple" => [(0., 40.), (120., 145.), (195., 205.), (21.0, 24.0), (90.0, 95.0), (5.5, 6.5), (100.1, 124.9)],
        "orange" => [(0., 40.), (5., 30.), (5., 15.), (10.0, 35.0), (90.0, 95.0), (6.0, 8.0), (100.2, 120.0)],
        "papaya" => [(31., 70.), (46., 70.), (45., 55.), (23.0, 43.7), (90.0, 95.0), (6.5, 7.0), (40.4, 248.9)],
        "coconut" => [(0., 40.), (5., 30.), (25., 35.), (25.0, 30.0), (90.0, 100.0), (5.5, 6.5), (131.1, 226.0)],
        "cotton" => [(100., 140.), (35., 60.), (15., 25.), (22.0, 26.0), (75.0, 85.0), (5.8, 8.0), (60.7, 99.9)],
        "jute" => [(60., 100.), (35., 60.), (35., 45.), (23.1, 27.0), (70.9, 90.0), (6.0, 7.5), (150.2, 200.0)],
        "coffee" => [(80., 120.), (15., 40.), (25., 35.), (23.1, 28.0), (50.0, 70.0), (6.0, 7.5), (115.2, 199.5)],
        other => unreachable!("no profile for {other}"),
    }
}

/// `per_class` rows for each of the 22 crops, in the public table's schema.
pub fn synthetic_crop_dataset(seed: u64, per_class: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = per_class * CROP_CLASSES.len();
    let mut features = Array2::zeros((n, 7));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, crop) in CROP_CLASSES.iter().enumerate() {
        let ranges = profile(crop);
        for _ in 0..per_class {
            for (j, &(lo, hi)) in ranges.iter().enumerate() {
                let v = if j < 3 {
                    rng.gen_range(lo as i64..=hi as i64) as f64
                } else {
                    rng.gen_range(lo..=hi)
                };
                features[[row, j]] = v;
            }
            labels.push(class);
            row += 1;
        }
    }
    let class_names = CROP_CLASSES.iter().map(|s| s.to_string()).collect();
    Dataset::new(features, labels, class_names).expect("labels index the class list")
}
