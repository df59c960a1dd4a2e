//! Published reference results on LFW and PubFig83, embedded for
//! side-by-side trend comparison in the summary CSVs. Rows carry
//! `source=paper` and are never used as assertion oracles for the desk
//! gallery: the absolute numbers are dataset-bound.

/// (dataset, method, [ssim at eps0 = 0.2, 0.4, 0.6, 0.8, 1.0])
pub const SSIM_REFERENCE: &[(&str, &str, [f64; 5])] = &[
    ("LFW", "dct_dp", [0.9767, 0.9908, 0.9937, 0.9956, 0.9965]),
    ("LFW", "pixel_dp", [0.9826, 0.9918, 0.9953, 0.9962, 0.9972]),
    ("LFW", "rdp_uniform", [0.9844, 0.9926, 0.9953, 0.9963, 0.9973]),
    ("LFW", "rdp_na", [0.9954, 0.9980, 0.9988, 0.9992, 0.9994]),
    ("LFW", "rdp_lmgd", [0.9955, 0.9983, 0.9991, 0.9993, 0.9994]),
    ("PubFig83", "dct_dp", [0.9728, 0.9882, 0.9931, 0.9947, 0.9958]),
    ("PubFig83", "pixel_dp", [0.9836, 0.9923, 0.9951, 0.9964, 0.9971]),
    ("PubFig83", "rdp_uniform", [0.9815, 0.9905, 0.9940, 0.9960, 0.9969]),
    ("PubFig83", "rdp_na", [0.9968, 0.9985, 0.9989, 0.9992, 0.9994]),
    ("PubFig83", "rdp_lmgd", [0.9967, 0.9986, 0.9991, 0.9993, 0.9994]),
];

pub const SSIM_REFERENCE_GRID: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// (dataset, method, false negative rate)
pub const FNR_REFERENCE: &[(&str, &str, f64)] = &[
    ("LFW", "dct_dp", 0.3775),
    ("LFW", "pixel_dp", 0.3944),
    ("LFW", "rdp_uniform", 0.4005),
    ("LFW", "rdp_na", 0.7718),
    ("LFW", "rdp_lmgd", 0.8138),
];
