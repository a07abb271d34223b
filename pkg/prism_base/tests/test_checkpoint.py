import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from ..checkpoint import load_checkpoint, read_checkpoint_header, save_checkpoint
from ..exceptions import CheckpointMismatchError
from .utils import EMB_DIM, tiny_model_config, tiny_params


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = os.path.join(self.tmp.name, 'model.ckpt')
        self.params = tiny_params(scale=0.3)
        save_checkpoint(self.path, self.params, extra={'epoch': 3, 'val_ap': 0.75})

    def test_round_trip_is_bit_exact(self):
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.checksum(), self.params.checksum())
        self.assertEqual(loaded.config, self.params.config)
        self.assertEqual(loaded.emb_dim, EMB_DIM)
        self.assertTrue(all(tensor.requires_grad for tensor in loaded.values()))

    def test_header_is_readable(self):
        with open(self.path, 'rb') as handle:
            blob = handle.read()
        config, emb_dim, meta, tensors, offset = read_checkpoint_header(blob, self.path)
        self.assertTrue(blob.startswith(b'PCK1\n'))
        self.assertEqual(config['K'], 2)
        self.assertEqual(meta, {'epoch': 3, 'val_ap': 0.75})
        self.assertEqual(tensors[0], ('node_proj.w1', (EMB_DIM, 8)))
        self.assertEqual(len(blob) - offset, 8 * self.params.count())

    def test_loading_into_the_same_config(self):
        loaded = load_checkpoint(self.path, config=tiny_model_config(), emb_dim=EMB_DIM)
        np.testing.assert_array_equal(loaded['decoder.w2'].values, self.params['decoder.w2'].values)

    def test_more_steps_than_stored(self):
        with self.assertRaises(CheckpointMismatchError) as caught:
            load_checkpoint(self.path, config=tiny_model_config(K=3))
        self.assertIn('step.2.w_q', caught.exception.params['missing'])

    def test_wrong_width_names_the_block(self):
        with self.assertRaises(CheckpointMismatchError) as caught:
            load_checkpoint(self.path, config=tiny_model_config(), emb_dim=EMB_DIM + 4)
        self.assertEqual(caught.exception.params['name'], 'node_proj.w1')

    def test_truncated_data(self):
        with open(self.path, 'rb') as handle:
            blob = handle.read()
        with open(self.path, 'wb') as handle:
            handle.write(blob[:-8])
        with self.assertRaises(CheckpointMismatchError):
            load_checkpoint(self.path)

    def test_not_a_checkpoint(self):
        with open(self.path, 'wb') as handle:
            handle.write(b'EMB1 something else')
        with self.assertRaises(CheckpointMismatchError):
            load_checkpoint(self.path)
