//! DRAM organization and physical-address decoding.

use core::fmt;

/// Bytes transferred per column access (one beat-group of a 64-bit channel).
pub const COLUMN_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub banks_per_rank: u32,
    pub subarrays_per_bank: u32,
    pub rows_per_subarray: u32,
    pub columns_per_row: u32,
}

impl Default for Geometry {
    /// A 64K-row DDR4 bank: 128 subarrays of 512 rows, 8 KiB rows.
    fn default() -> Self {
        Self {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 16,
            subarrays_per_bank: 128,
            rows_per_subarray: 512,
            columns_per_row: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeometryError {
    #[error("geometry field {0} must be a non-zero power of two")]
    NotPowerOfTwo(&'static str),
    #[error("address {address:#x} is beyond the configured capacity of {capacity:#x} bytes")]
    OutOfRange { address: u64, capacity: u64 },
    #[error("coordinate {field}={value} is out of range (limit {limit})")]
    CoordinateOutOfRange {
        field: &'static str,
        value: u64,
        limit: u64,
    },
}

/// Bit order used to split a physical address, listed from the least
/// significant field upwards (the byte offset within a column always sits
/// below everything else).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AddressMapping {
    /// column | row | bank | rank | channel. Consecutive rows of a bank are
    /// contiguous in the address space.
    #[default]
    RowInterleaved,
    /// column | channel | bank | rank | row. Consecutive rows are spread over
    /// channels and banks first.
    BankInterleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DecodedAddress {
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
    pub subarray: u32,
    /// Row index inside its subarray.
    pub row: u32,
    pub column: u32,
}

impl fmt::Display for DecodedAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ch{} ra{} ba{} sa{} ro{} co{}",
            self.channel, self.rank, self.bank, self.subarray, self.row, self.column
        )
    }
}

#[derive(Clone, Copy)]
enum Field {
    Column,
    Row,
    Bank,
    Rank,
    Channel,
}

impl Geometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            ("channels", self.channels),
            ("ranks_per_channel", self.ranks_per_channel),
            ("banks_per_rank", self.banks_per_rank),
            ("subarrays_per_bank", self.subarrays_per_bank),
            ("rows_per_subarray", self.rows_per_subarray),
            ("columns_per_row", self.columns_per_row),
        ];
        for (name, v) in fields {
            if v == 0 || !v.is_power_of_two() {
                return Err(GeometryError::NotPowerOfTwo(name));
            }
        }
        Ok(())
    }

    pub fn rows_per_bank(&self) -> u32 {
        self.subarrays_per_bank * self.rows_per_subarray
    }

    pub fn banks_per_channel(&self) -> u32 {
        self.ranks_per_channel * self.banks_per_rank
    }

    pub fn row_bytes(&self) -> u64 {
        self.columns_per_row as u64 * COLUMN_BYTES
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.row_bytes()
            * self.rows_per_bank() as u64
            * self.banks_per_rank as u64
            * self.ranks_per_channel as u64
            * self.channels as u64
    }

    /// Subarray holding a bank-level row index.
    pub fn subarray_of(&self, row: u32) -> u32 {
        row / self.rows_per_subarray
    }

    pub fn row_in_subarray(&self, row: u32) -> u32 {
        row % self.rows_per_subarray
    }

    pub fn bank_row(&self, subarray: u32, row_in_subarray: u32) -> u32 {
        subarray * self.rows_per_subarray + row_in_subarray
    }

    fn field_len(&self, f: Field) -> u64 {
        match f {
            Field::Column => self.columns_per_row as u64,
            Field::Row => self.rows_per_bank() as u64,
            Field::Bank => self.banks_per_rank as u64,
            Field::Rank => self.ranks_per_channel as u64,
            Field::Channel => self.channels as u64,
        }
    }

    fn order(mapping: AddressMapping) -> [Field; 5] {
        match mapping {
            AddressMapping::RowInterleaved => [
                Field::Column,
                Field::Row,
                Field::Bank,
                Field::Rank,
                Field::Channel,
            ],
            AddressMapping::BankInterleaved => [
                Field::Column,
                Field::Channel,
                Field::Bank,
                Field::Rank,
                Field::Row,
            ],
        }
    }

    /// Splits a byte address into DRAM coordinates.
    pub fn decode(
        &self,
        mapping: AddressMapping,
        address: u64,
    ) -> Result<DecodedAddress, GeometryError> {
        let capacity = self.capacity_bytes();
        if address >= capacity {
            return Err(GeometryError::OutOfRange { address, capacity });
        }
        let mut rest = address / COLUMN_BYTES;
        let mut vals = [0u64; 5];
        for f in Self::order(mapping) {
            let len = self.field_len(f);
            vals[f as usize] = rest % len;
            rest /= len;
        }
        let row = vals[Field::Row as usize] as u32;
        Ok(DecodedAddress {
            channel: vals[Field::Channel as usize] as u32,
            rank: vals[Field::Rank as usize] as u32,
            bank: vals[Field::Bank as usize] as u32,
            subarray: self.subarray_of(row),
            row: self.row_in_subarray(row),
            column: vals[Field::Column as usize] as u32,
        })
    }

    /// Inverse of [`Geometry::decode`] (byte offset zero).
    pub fn encode(
        &self,
        mapping: AddressMapping,
        at: &DecodedAddress,
    ) -> Result<u64, GeometryError> {
        let checks = [
            ("channel", at.channel as u64, self.channels as u64),
            ("rank", at.rank as u64, self.ranks_per_channel as u64),
            ("bank", at.bank as u64, self.banks_per_rank as u64),
            (
                "subarray",
                at.subarray as u64,
                self.subarrays_per_bank as u64,
            ),
            ("row", at.row as u64, self.rows_per_subarray as u64),
            ("column", at.column as u64, self.columns_per_row as u64),
        ];
        for (field, value, limit) in checks {
            if value >= limit {
                return Err(GeometryError::CoordinateOutOfRange {
                    field,
                    value,
                    limit,
                });
            }
        }
        let mut vals = [0u64; 5];
        vals[Field::Column as usize] = at.column as u64;
        vals[Field::Row as usize] = self.bank_row(at.subarray, at.row) as u64;
        vals[Field::Bank as usize] = at.bank as u64;
        vals[Field::Rank as usize] = at.rank as u64;
        vals[Field::Channel as usize] = at.channel as u64;
        let mut addr = 0u64;
        for f in Self::order(mapping).iter().rev() {
            addr = addr * self.field_len(*f) + vals[*f as usize];
        }
        Ok(addr * COLUMN_BYTES)
    }
}

impl DecodedAddress {
    pub fn bank_row(&self, g: &Geometry) -> u32 {
        g.bank_row(self.subarray, self.row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Geometry {
        Geometry {
            channels: 2,
            ranks_per_channel: 2,
            banks_per_rank: 4,
            subarrays_per_bank: 8,
            rows_per_subarray: 64,
            columns_per_row: 128,
        }
    }

    #[test]
    fn zero_decodes_to_origin() {
        let g = small();
        let d = g.decode(AddressMapping::RowInterleaved, 0).unwrap();
        assert_eq!(
            d,
            DecodedAddress {
                channel: 0,
                rank: 0,
                bank: 0,
                subarray: 0,
                row: 0,
                column: 0
            }
        );
    }

    #[test]
    fn one_row_size_moves_to_next_row() {
        let g = small();
        let d = g
            .decode(AddressMapping::RowInterleaved, g.row_bytes())
            .unwrap();
        assert_eq!((d.column, d.row, d.subarray, d.bank), (0, 1, 0, 0));
        // Crossing a subarray boundary.
        let d = g
            .decode(AddressMapping::RowInterleaved, g.row_bytes() * 64)
            .unwrap();
        assert_eq!((d.subarray, d.row), (1, 0));
    }

    #[test]
    fn max_address_is_max_coordinates() {
        let g = small();
        let d = g
            .decode(AddressMapping::RowInterleaved, g.capacity_bytes() - 1)
            .unwrap();
        assert_eq!(d.channel, 1);
        assert_eq!(d.rank, 1);
        assert_eq!(d.bank, 3);
        assert_eq!(d.subarray, 7);
        assert_eq!(d.row, 63);
        assert_eq!(d.column, 127);
        assert!(matches!(
            g.decode(AddressMapping::RowInterleaved, g.capacity_bytes()),
            Err(GeometryError::OutOfRange { .. })
        ));
    }

    #[test]
    fn bank_interleaved_spreads_rows() {
        let g = small();
        let d = g
            .decode(AddressMapping::BankInterleaved, g.row_bytes())
            .unwrap();
        assert_eq!((d.channel, d.bank, d.row), (1, 0, 0));
    }

    #[test]
    fn non_power_of_two_rejected() {
        let g = Geometry {
            banks_per_rank: 12,
            ..small()
        };
        assert_eq!(
            g.validate(),
            Err(GeometryError::NotPowerOfTwo("banks_per_rank"))
        );
    }

    proptest::proptest! {
        #[test]
        fn encode_inverts_decode(addr in 0u64..(2 * 2 * 4 * 512 * 128 * 8), bank_order in proptest::bool::ANY) {
            let g = small();
            let m = if bank_order { AddressMapping::BankInterleaved } else { AddressMapping::RowInterleaved };
            let d = g.decode(m, addr).unwrap();
            proptest::prop_assert_eq!(g.encode(m, &d).unwrap(), addr - addr % COLUMN_BYTES);
        }
    }
}
