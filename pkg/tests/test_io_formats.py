"""
Tests for the dataset and model file formats.
"""

import os
import struct

import numpy as np
import pytest


class TestDataset:
    """Test write_dataset and read_dataset."""

    def test_write_and_read(self, tiny_records, temp_dir):
        """Records survive a file trip with float32 grids."""
        from app.utils.io_formats import read_dataset, write_dataset

        path = os.path.join(temp_dir, "data.bin")
        written = write_dataset(path, tiny_records, 1.0)
        records, cell_size = read_dataset(path)

        assert written == os.path.getsize(path)
        assert cell_size == 1.0
        assert len(records) == len(tiny_records)
        first = records[5]
        assert (first.trial, first.step, first.action_index) == (1, 1, 1)
        assert first.action_center == (3.0, 2.0)
        np.testing.assert_allclose(first.x, tiny_records[5].x, rtol=1e-6)
        np.testing.assert_allclose(first.s_next, tiny_records[5].s_next, rtol=1e-6)

    def test_empty_dataset(self, temp_dir):
        from app.utils.io_formats import FormatError, write_dataset

        with pytest.raises(FormatError):
            write_dataset(os.path.join(temp_dir, "data.bin"), [], 1.0)

    def test_mixed_grids(self, tiny_records, temp_dir):
        """Every record must share the first record's grid."""
        from dataclasses import replace

        from app.utils.io_formats import FormatError, write_dataset

        records = list(tiny_records)
        records[2] = replace(records[2], x=np.zeros((4, 4)), dx=np.zeros((4, 4)))

        with pytest.raises(FormatError):
            write_dataset(os.path.join(temp_dir, "data.bin"), records, 1.0)

    def test_bad_magic(self, tiny_records, temp_dir):
        from app.utils.io_formats import FormatError, read_dataset, write_dataset

        path = os.path.join(temp_dir, "data.bin")
        write_dataset(path, tiny_records, 1.0)
        with open(path, 'r+b') as f:
            f.write(b'NOTGRAIN')

        with pytest.raises(FormatError, match="not a dataset"):
            read_dataset(path)

    def test_unsupported_version(self, tiny_records, temp_dir):
        from app.utils.io_formats import FormatError, read_dataset, write_dataset

        path = os.path.join(temp_dir, "data.bin")
        write_dataset(path, tiny_records, 1.0)
        with open(path, 'r+b') as f:
            f.seek(8)
            f.write(struct.pack('<H', 99))

        with pytest.raises(FormatError, match="version"):
            read_dataset(path)

    def test_truncated(self, tiny_records, temp_dir):
        from app.utils.io_formats import FormatError, read_dataset, write_dataset

        path = os.path.join(temp_dir, "data.bin")
        write_dataset(path, tiny_records, 1.0)
        with open(path, 'rb') as f:
            raw = f.read()
        with open(path, 'wb') as f:
            f.write(raw[:-1])

        with pytest.raises(FormatError):
            read_dataset(path)


class TestModelHeader:
    """Test the model file header."""

    def test_header_fields(self, temp_dir):
        from app.utils.io_formats import (MODEL_DIMS, read_model_header,
                                          read_tensors, write_model_file)

        dims = {name: k + 1 for k, name in enumerate(MODEL_DIMS)}
        dims['channels'] = 2
        path = os.path.join(temp_dir, "m.bin")
        tensors = [np.arange(6.0).reshape(2, 3), np.ones(4)]
        write_model_file(path, 1, dims, 0.5, np.array([1.0, 2.0]), np.array([3.0, 4.0]), tensors)
        with open(path, 'rb') as f:
            raw = f.read()

        variant, read_dims, cell_size, mean, scale, offset = read_model_header(raw, path)

        assert variant == 1
        assert read_dims == dims
        assert cell_size == 0.5
        np.testing.assert_array_equal(mean, [1.0, 2.0])
        np.testing.assert_array_equal(scale, [3.0, 4.0])
        out = read_tensors(raw, offset, [(2, 3), (4,)], path)
        np.testing.assert_array_equal(out[0], tensors[0])

    def test_missing_dims(self, temp_dir):
        from app.utils.io_formats import FormatError, write_model_file

        with pytest.raises(FormatError, match="missing"):
            write_model_file(os.path.join(temp_dir, "m.bin"), 0, {'rows': 8}, 1.0, np.zeros(3), np.ones(3), [])

    def test_wrong_tensor_size(self):
        from app.utils.io_formats import FormatError, read_tensors

        with pytest.raises(FormatError):
            read_tensors(b'\x00' * 12, 0, [(2, 2)])
