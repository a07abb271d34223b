import os
import tempfile

import numpy as np
from django.test import SimpleTestCase
from scipy.stats import chisquare

from ..app_settings import PAD_TOKEN
from ..autodiff.rng import Rng
from ..dytag_data import DyTagDataset, HistoryIndex, InteractionEvent, SyntheticConfig, \
    build_candidate_pool, chronological_split, convert_dtgb, extract_history, generate_synthetic, load_dataset_dir, \
    sample_negative, sample_negatives, save_dataset
from ..exceptions import ConfigurationError, DatasetFormatError, ReferentialIntegrityError, SamplingError
from .utils import tiny_dataset


def write_files(directory, events, nodes='node_id,text\na,alpha\nb,beta\nc,"gamma, delta"\n',
                edges='edge_text_id,text\nr0,likes\n'):
    for name, body in (('events.csv', events), ('node_texts.csv', nodes), ('edge_texts.csv', edges)):
        with open(os.path.join(directory, name), 'w', encoding='utf-8') as handle:
            handle.write(body)


def small_stream():
    """ 0-1 @1, 1-2 @2, 0-2 @3, 0-1 @3 (tie), 2-0 @5 """
    return DyTagDataset([0, 1, 0, 0, 2], [1, 2, 2, 1, 0], [0, 0, 0, 0, 0], [1.0, 2.0, 3.0, 3.0, 5.0],
                        ['n0', 'n1', 'n2'], ['e0'])


class LoadDatasetTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = self.tmp.name

    def test_reads_and_maps_ids_in_file_order(self):
        write_files(self.dir, 'src,dst,edge_text_id,timestamp\nc,a,r0,2.5\na,b,r0,4\n')
        ds = load_dataset_dir(self.dir)
        self.assertEqual(ds.num_nodes, 3)
        np.testing.assert_array_equal(ds.src, [2, 0])
        np.testing.assert_array_equal(ds.dst, [0, 1])
        self.assertEqual(ds.node_texts[2], 'gamma, delta')
        self.assertEqual(ds.event(1).timestamp, 4.0)

    def test_texts_are_kept_verbatim(self):
        write_files(self.dir, 'src,dst,edge_text_id,timestamp\na,b,r0,1\n',
                    nodes='node_id,text\na,NA\nb,\nc,"line one\nline two"\n')
        ds = load_dataset_dir(self.dir)
        self.assertEqual(ds.node_texts, ['NA', '', 'line one\nline two'])
        save_dataset(ds, os.path.join(self.dir, 'copy'))
        self.assertEqual(load_dataset_dir(os.path.join(self.dir, 'copy')).node_texts, ds.node_texts)

    def test_duplicate_node_id_names_the_line(self):
        write_files(self.dir, 'src,dst,edge_text_id,timestamp\na,b,r0,1\n',
                    nodes='node_id,text\na,alpha\nb,beta\na,again\n')
        with self.assertRaisesRegex(DatasetFormatError, 'line 4'):
            load_dataset_dir(self.dir)

    def test_unsorted_events_are_resorted_stably(self):
        write_files(self.dir, 'src,dst,edge_text_id,timestamp\na,b,r0,5\nb,c,r0,1\nc,a,r0,5\n')
        with self.assertLogs('prism.dytag_data', level='WARNING'):
            ds = load_dataset_dir(self.dir)
        np.testing.assert_array_equal(ds.timestamps, [1.0, 5.0, 5.0])
        np.testing.assert_array_equal(ds.src, [1, 0, 2])

    def test_bad_header(self):
        write_files(self.dir, 'from,to,edge,time\na,b,r0,1\n')
        with self.assertRaises(DatasetFormatError) as caught:
            load_dataset_dir(self.dir)
        self.assertEqual(caught.exception.code, 'bad_header')

    def test_bad_timestamp_names_the_line(self):
        write_files(self.dir, 'src,dst,edge_text_id,timestamp\na,b,r0,1\na,c,r0,soon\n')
        with self.assertRaisesRegex(DatasetFormatError, 'line 3'):
            load_dataset_dir(self.dir)

    def test_negative_timestamp(self):
        write_files(self.dir, 'src,dst,edge_text_id,timestamp\na,b,r0,-1\n')
        with self.assertRaises(DatasetFormatError):
            load_dataset_dir(self.dir)

    def test_unknown_ids_are_listed(self):
        write_files(self.dir, 'src,dst,edge_text_id,timestamp\na,zed,r0,1\na,b,r9,2\n')
        with self.assertRaises(ReferentialIntegrityError) as caught:
            load_dataset_dir(self.dir)
        self.assertEqual(caught.exception.params['nodes'], ['zed'])
        self.assertEqual(caught.exception.params['edges'], ['r9'])

    def test_saved_dataset_loads_back_identically(self):
        ds = tiny_dataset(seed=3)
        manifest = save_dataset(ds, self.dir, {'note': 'x'})
        self.assertEqual(manifest['num_events'], ds.num_events)
        loaded = load_dataset_dir(self.dir)
        np.testing.assert_array_equal(loaded.src, ds.src)
        np.testing.assert_array_equal(loaded.dst, ds.dst)
        np.testing.assert_array_equal(loaded.timestamps, ds.timestamps)
        self.assertEqual(loaded.node_texts, ds.node_texts)

    def test_convert_dtgb(self):
        src = os.path.join(self.dir, 'dtgb')
        os.makedirs(src)
        files = {'edge_list.csv': 'u,i,r,ts,label\n1,0,7,10,x\n0,1,7,3,y\n',
                 'entity_text.csv': 'i,text\n0,first node\n1,second node\n',
                 'relation_text.csv': 'i,text\n7,rated\n'}
        for name, body in files.items():
            with open(os.path.join(src, name), 'w', encoding='utf-8') as handle:
                handle.write(body)
        out = os.path.join(self.dir, 'out')
        manifest = convert_dtgb(src, out)
        self.assertEqual(manifest['source'], 'dtgb')
        ds = load_dataset_dir(out)
        np.testing.assert_array_equal(ds.timestamps, [3.0, 10.0])
        np.testing.assert_array_equal(ds.src, [0, 1])
        self.assertEqual(ds.edge_texts, ['rated'])


class SyntheticTests(SimpleTestCase):

    def test_same_seed_same_stream(self):
        a, b = tiny_dataset(seed=4), tiny_dataset(seed=4)
        np.testing.assert_array_equal(a.src, b.src)
        np.testing.assert_array_equal(a.timestamps, b.timestamps)
        self.assertFalse(np.array_equal(a.dst, tiny_dataset(seed=5).dst))

    def test_stream_is_strictly_increasing_without_self_loops(self):
        ds = tiny_dataset(seed=1, events=200)
        self.assertTrue(np.all(np.diff(ds.timestamps) > 0))
        self.assertFalse(np.any(ds.src == ds.dst))

    def test_no_recency_keeps_events_inside_communities(self):
        ds = tiny_dataset(seed=2, events=100, recency_bias=0.0)
        np.testing.assert_array_equal(ds.communities[ds.src], ds.communities[ds.dst])

    def test_node_texts_mention_the_community(self):
        ds = tiny_dataset(seed=0)
        self.assertIn('topic_%d' % ds.communities[3], ds.node_texts[3])

    def test_infeasible_settings(self):
        with self.assertRaises(ConfigurationError):
            generate_synthetic(SyntheticConfig(num_nodes=1, num_events=10, num_communities=1))
        with self.assertRaises(ConfigurationError):
            generate_synthetic(SyntheticConfig(num_nodes=10, num_events=10, num_communities=2, recency_bias=1.5))


class SplitTests(SimpleTestCase):

    def test_seventy_fifteen_fifteen(self):
        splits = chronological_split(tiny_dataset(events=100))
        self.assertEqual((len(splits.train), len(splits.val), len(splits.test)), (70, 15, 15))
        self.assertEqual(splits.test.stop, 100)

    def test_remainder_goes_to_test(self):
        splits = chronological_split(tiny_dataset(events=33))
        self.assertEqual((len(splits.train), len(splits.val), len(splits.test)), (23, 4, 6))

    def test_tiny_streams_are_refused(self):
        with self.assertRaises(ConfigurationError):
            chronological_split(tiny_dataset(events=9))

    def test_inductive_nodes_never_appear_in_train(self):
        ds = tiny_dataset(nodes=30, events=40, communities=3)
        splits = chronological_split(ds)
        seen = set(ds.src[:len(splits.train)]) | set(ds.dst[:len(splits.train)])
        self.assertFalse(seen & splits.inductive_nodes)
        self.assertEqual(len(seen) + len(splits.inductive_nodes), ds.num_nodes)


class HistoryTests(SimpleTestCase):

    def setUp(self):
        self.index = HistoryIndex.build(small_stream())

    def test_strictly_before_query_time(self):
        tokens, mask = extract_history(self.index, 0, 3.0, 4)
        self.assertEqual(mask, [0, 0, 0, 1])
        self.assertEqual(tokens[-1], (1, 0, 1.0))
        self.assertEqual(tokens[0], PAD_TOKEN)

    def test_both_endpoints_get_the_event_and_ties_keep_order(self):
        tokens, mask = extract_history(self.index, 0, 6.0, 4)
        self.assertEqual(mask, [1, 1, 1, 1])
        self.assertEqual([token[0] for token in tokens], [1, 2, 1, 2])
        self.assertEqual([token[2] for token in tokens], [1.0, 3.0, 3.0, 5.0])

    def test_only_the_latest_L_are_kept(self):
        tokens, mask = extract_history(self.index, 2, 6.0, 2)
        self.assertEqual(mask, [1, 1])
        self.assertEqual([token[0] for token in tokens], [0, 0])
        self.assertEqual([token[2] for token in tokens], [3.0, 5.0])

    def test_no_history(self):
        tokens, mask = extract_history(self.index, 2, 2.0, 3)
        self.assertEqual(mask, [0, 0, 0])
        self.assertEqual(tokens, [PAD_TOKEN] * 3)

    def test_prefix_index_ignores_later_events(self):
        partial = HistoryIndex.build(small_stream(), stop=2)
        _, mask = extract_history(partial, 0, 10.0, 4)
        self.assertEqual(sum(mask), 1)

    def test_batch_matches_an_event_by_event_replay(self):
        ds = tiny_dataset(seed=6, events=80)
        ds.timestamps[20:24] = ds.timestamps[20]
        index = HistoryIndex.build(ds)
        lists = [[] for _ in range(ds.num_nodes)]
        for event in ds.events:
            lists[event.src].append((event.dst, event.edge_text_id, event.timestamp))
            lists[event.dst].append((event.src, event.edge_text_id, event.timestamp))

        rng = Rng(6).substream('queries')
        nodes = rng.integers(0, ds.num_nodes, size=60)
        times = np.concatenate([ds.timestamps[rng.integers(0, ds.num_events, size=30)],
                                rng.uniform(0.0, ds.timestamps[-1] + 1.0, size=30)])
        L = 5
        partners, edges, event_times, mask = index.batch(nodes, times, L)
        for row, (node, t) in enumerate(zip(nodes.tolist(), times.tolist())):
            expected = [item for item in lists[node] if item[2] < t][-L:]
            width = int(mask[row].sum())
            self.assertEqual(width, len(expected))
            got = list(zip(partners[row, L - width:].tolist(), edges[row, L - width:].tolist(),
                           event_times[row, L - width:].tolist()))
            self.assertEqual(got, expected)
            self.assertTrue(np.all(partners[row, :L - width] == -1))

    def test_history_length_must_be_positive(self):
        with self.assertRaises(ConfigurationError):
            extract_history(self.index, 0, 3.0, 0)


class SamplingTests(SimpleTestCase):

    def test_negatives_avoid_the_true_destination(self):
        universe = np.arange(5)
        truth = np.tile(np.arange(5), 200)
        negatives = sample_negatives(Rng(0), truth, universe)
        self.assertFalse(np.any(negatives == truth))
        self.assertEqual(set(negatives.tolist()), set(range(5)))

    def test_truth_outside_universe_samples_everything(self):
        negatives = sample_negatives(Rng(1), np.full(300, 9), np.array([2, 4]))
        self.assertEqual(set(negatives.tolist()), {2, 4})

    def test_nothing_to_sample(self):
        with self.assertRaises(SamplingError):
            sample_negatives(Rng(0), [3], np.array([3]))

    def test_unsorted_universe_with_duplicates(self):
        negatives = sample_negatives(Rng(4), np.full(2000, 1), [3, 1, 2, 3])
        self.assertNotIn(1, negatives.tolist())
        self.assertEqual(set(negatives.tolist()), {2, 3})
        share = np.mean(negatives == 3)
        self.assertTrue(0.45 < share < 0.55)

    def test_empty_universe(self):
        with self.assertRaises(SamplingError):
            sample_negatives(Rng(0), [3], np.array([], dtype=np.int64))

    def test_single_negative_draws_are_uniform(self):
        universe = np.arange(10)
        positive = InteractionEvent(src=7, dst=4, edge_text_id=0, timestamp=1.0)
        draws = [sample_negative(Rng(11).substream('draw', i), positive, universe) for i in range(4500)]
        counts = np.bincount(draws, minlength=10)
        self.assertEqual(counts[4], 0)
        others = np.delete(counts, 4)
        self.assertGreater(chisquare(others).pvalue, 1e-3)

    def test_candidate_pool(self):
        pool = build_candidate_pool(Rng(2), (0, 1.5, 4), 5, np.arange(10))
        self.assertEqual(len(pool.candidates), 5)
        self.assertEqual(len(set(pool.candidates)), 5)
        self.assertIn(4, pool.candidates)
        self.assertEqual(pool.query, (0, 1.5, 4))

    def test_pool_larger_than_universe(self):
        with self.assertRaises(ConfigurationError):
            build_candidate_pool(Rng(2), (0, 1.5, 4), 6, np.arange(5))
