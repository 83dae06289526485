//! San Francisco Bay Area acquisition set: two Envisat tracks and one ALOS
//! track, with their viewing geometries and acquisition dates as printed.

use chrono::NaiveDate;

use crate::geometry::{LookSide, SensorGeometry};

pub const ENVISAT_DES: &str = "envisat_des";
pub const ENVISAT_ASC: &str = "envisat_asc";
pub const ALOS_ASC: &str = "alos_asc";

/// (sensor id, incidence°, heading°)
pub const ANGLES: [(&str, f64, f64); 3] = [
    (ALOS_ASC, 34.5, 350.0),
    (ENVISAT_ASC, 23.0, 350.0),
    (ENVISAT_DES, 23.0, 193.0),
];

pub const ENVISAT_DES_DATES: [u32; 32] = [
    20070721, 20070825, 20070929, 20071103, 20071208, 20080112, 20080216, 20080322, 20080426,
    20080531, 20080705, 20080809, 20080913, 20081018, 20081122, 20090131, 20090307, 20090411,
    20090516, 20090725, 20090829, 20091003, 20091107, 20091212, 20100116, 20100220, 20100327,
    20100501, 20100605, 20100710, 20100814, 20100918,
];

pub const ENVISAT_ASC_DATES: [u32; 24] = [
    20070923, 20071202, 20080106, 20080210, 20080316, 20080420, 20080525, 20080629, 20080803,
    20080907, 20081221, 20090125, 20090301, 20090405, 20090510, 20090614, 20090719, 20090823,
    20090927, 20091101, 20091206, 20100704, 20100808, 20101017,
];

pub const ALOS_ASC_DATES: [u32; 19] = [
    20070713, 20070828, 20071013, 20071128, 20080113, 20080228, 20080414, 20080530, 20080715,
    20081130, 20090115, 20090302, 20090602, 20090718, 20091018, 20100420, 20100605, 20100721,
    20101206,
];

/// Date from a `YYYYMMDD` integer code.
pub fn parse_yyyymmdd(code: u32) -> Option<NaiveDate> {
    NaiveDate::from_ymd_opt((code / 10000) as i32, (code / 100) % 100, code % 100)
}

pub fn yyyymmdd(code: u32) -> NaiveDate {
    parse_yyyymmdd(code).expect("fixture date is a valid calendar date")
}

/// Geometries in sorted sensor-id order.
pub fn geometries() -> Vec<SensorGeometry> {
    ANGLES
        .iter()
        .map(|&(id, inc, head)| {
            SensorGeometry::new(id, inc, head, LookSide::Right).expect("fixture angles are valid")
        })
        .collect()
}

/// Per-sensor acquisition dates in the same order as [`geometries`].
pub fn acquisition_dates() -> Vec<(String, Vec<NaiveDate>)> {
    [
        (ALOS_ASC, &ALOS_ASC_DATES[..]),
        (ENVISAT_ASC, &ENVISAT_ASC_DATES[..]),
        (ENVISAT_DES, &ENVISAT_DES_DATES[..]),
    ]
    .into_iter()
    .map(|(id, codes)| (id.to_string(), codes.iter().map(|&c| yyyymmdd(c)).collect()))
    .collect()
}
