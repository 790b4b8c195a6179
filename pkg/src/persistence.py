"""
JSON and CSV persistence for channels, solutions, clusters and sweeps.

Complex arrays are stored as nested lists whose innermost pairs are
``[re, im]``. Every JSON document carries ``schema_version`` and ``kind``.
"""

import json
import logging
import os

import numpy as np
import pandas as pd

from src.alignment import TwoLayerSolution
from src.channel import Beamformers, ChannelSet, PowerAllocation
from src.errors import PersistenceError, SchemaVersionError
from src.experiments import FixedPointCluster, SweepRecord
from src.maxsinr import Solution
from src.metrics import AlignmentDiagnostics, RateReport

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SWEEP_COLUMNS = [
    'snr_db', 'algorithm', 'cluster_id', 'rate_bits',
    'occupancy_percent', 'channel_seed', 'init_seed',
]


def encode_complex(array):
    array = np.asarray(array, dtype=complex)
    return np.stack([array.real, array.imag], axis=-1).tolist()


def decode_complex(data):
    pairs = np.asarray(data, dtype=float)
    if pairs.shape[-1:] != (2,):
        raise ValueError('complex array entries must be [re, im] pairs')
    return pairs[..., 0] + 1j * pairs[..., 1]


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return encode_complex(value)
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(document, path, kind):
    """
    Write ``document`` with ``schema_version`` and ``kind`` fields.

    Raises:
    --------
    PersistenceError
        If the file cannot be written.
    """
    payload = {'schema_version': SCHEMA_VERSION, 'kind': kind}
    payload.update(_jsonable(document))
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(payload, f, indent=1)
            f.write('\n')
    except OSError as e:
        raise PersistenceError(path, f'cannot write {kind} file ({e.strerror})') from e
    logger.debug('Wrote %s to %s', kind, path)


def read_json(path, kind):
    """
    Read a document written by ``write_json`` and check its kind and version.

    Raises:
    --------
    SchemaVersionError
        If the document was written by a newer schema.
    PersistenceError
        If the file is unreadable, malformed or of another kind.
    """
    try:
        with open(path, 'r') as f:
            document = json.load(f)
    except OSError as e:
        raise PersistenceError(path, f'cannot read {kind} file ({e.strerror})') from e
    except json.JSONDecodeError as e:
        raise PersistenceError(path, f'malformed JSON ({e.msg})') from e

    if not isinstance(document, dict) or 'schema_version' not in document:
        raise PersistenceError(path, 'missing schema_version')
    version = document['schema_version']
    if not isinstance(version, int) or version > SCHEMA_VERSION:
        raise SchemaVersionError(
            f'{path} has schema_version {version!r}; this version reads up to {SCHEMA_VERSION}'
        )
    if document.get('kind') != kind:
        raise PersistenceError(path, f"expected a {kind} document, found {document.get('kind')!r}")
    return document


def channels_to_dict(ch):
    return {'seed': ch.seed, 'K': ch.K, 'M': ch.M, 'H': encode_complex(ch.H)}


def channels_from_dict(data):
    return ChannelSet(H=decode_complex(data['H']), seed=data['seed'])


def save_channels(ch, path):
    write_json(channels_to_dict(ch), path, 'channels')


def load_channels(path):
    try:
        return channels_from_dict(read_json(path, 'channels'))
    except (KeyError, ValueError) as e:
        raise PersistenceError(path, f'invalid channel document ({e})') from e


def beamformers_to_dict(B):
    return {'V': encode_complex(B.V), 'U': encode_complex(B.U), 'orthonormal': B.orthonormal}


def beamformers_from_dict(data):
    return Beamformers(V=decode_complex(data['V']), U=decode_complex(data['U']),
                       orthonormal=bool(data['orthonormal']))


def powers_to_dict(P):
    return {'powers': P.powers.tolist(), 'water_level': P.water_level}


def powers_from_dict(data):
    return PowerAllocation(np.asarray(data['powers'], dtype=float), water_level=data.get('water_level'))


def solution_to_dict(solution):
    return {
        'algorithm': solution.algorithm,
        'iterations': solution.iterations,
        'converged': solution.converged,
        'final_displacement': solution.final_displacement,
        'beamformers': beamformers_to_dict(solution.beamformers),
        'powers': powers_to_dict(solution.powers),
        'rate': solution.rate.to_dict(),
        'alignment': solution.alignment.to_dict(),
        'trace': solution.trace,
        'details': solution.details,
    }


def solution_from_dict(data):
    return Solution(
        beamformers=beamformers_from_dict(data['beamformers']),
        powers=powers_from_dict(data['powers']),
        algorithm=data['algorithm'],
        iterations=int(data['iterations']),
        converged=bool(data['converged']),
        final_displacement=float(data['final_displacement']),
        rate=RateReport.from_dict(data['rate']),
        alignment=AlignmentDiagnostics.from_dict(data['alignment']),
        trace=data.get('trace'),
        details=dict(data.get('details') or {}),
    )


def save_solution(solution, path):
    write_json(solution_to_dict(solution), path, 'solution')


def load_solution(path):
    return solution_from_dict(read_json(path, 'solution'))


def clusters_to_list(clusters):
    return [
        {
            'label': c.label,
            'count': c.count,
            'mean_rate': c.mean_rate,
            'members': list(c.members),
            'representative': solution_to_dict(c.representative),
        }
        for c in clusters
    ]


def clusters_from_list(data):
    return [
        FixedPointCluster(
            representative=solution_from_dict(item['representative']),
            count=int(item['count']),
            mean_rate=float(item['mean_rate']),
            members=[int(i) for i in item['members']],
            label=item['label'],
        )
        for item in data
    ]


def save_run(path, solutions, clusters, meta=None):
    """One document holding every solution of a multi-start run plus its clusters."""
    write_json(
        {
            'meta': meta or {},
            'solutions': [solution_to_dict(s) for s in solutions],
            'clusters': clusters_to_list(clusters),
        },
        path,
        'run',
    )


def load_run(path):
    """
    Returns:
    --------
    solutions : list of Solution
    clusters : list of FixedPointCluster
    meta : dict
    """
    document = read_json(path, 'run')
    solutions = [solution_from_dict(s) for s in document['solutions']]
    return solutions, clusters_from_list(document['clusters']), document.get('meta', {})


def two_layer_to_dict(solution):
    return {
        'kind_of_outer': solution.kind,
        'inner': beamformers_to_dict(solution.inner),
        'outer_tx': encode_complex(solution.outer_tx),
        'outer_rx': encode_complex(solution.outer_rx),
        'singular_values': solution.singular_values.tolist(),
        'powers': powers_to_dict(solution.powers),
        'composed': beamformers_to_dict(solution.composed),
        'rate': solution.rate.to_dict(),
        'alignment': solution.alignment.to_dict(),
    }


def two_layer_from_dict(data):
    return TwoLayerSolution(
        inner=beamformers_from_dict(data['inner']),
        outer_tx=decode_complex(data['outer_tx']),
        outer_rx=decode_complex(data['outer_rx']),
        singular_values=np.asarray(data['singular_values'], dtype=float),
        powers=powers_from_dict(data['powers']),
        composed=beamformers_from_dict(data['composed']),
        rate=RateReport.from_dict(data['rate']),
        alignment=AlignmentDiagnostics.from_dict(data['alignment']),
        kind=data['kind_of_outer'],
    )


def save_two_layer(solution, path):
    write_json(two_layer_to_dict(solution), path, 'two_layer')


def load_two_layer(path):
    return two_layer_from_dict(read_json(path, 'two_layer'))


def records_to_frame(records):
    frame = pd.DataFrame([r.__dict__ for r in records], columns=SWEEP_COLUMNS)
    return frame[SWEEP_COLUMNS]


def write_sweep_csv(records, path, append=False):
    """
    Write sweep records under the fixed header; with ``append`` rows are
    added to an existing file without repeating the header.
    """
    frame = records_to_frame(records)
    exists = append and os.path.exists(path)
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        frame.to_csv(path, mode='a' if exists else 'w', header=not exists, index=False,
                     float_format='%.17g')
    except OSError as e:
        raise PersistenceError(path, f'cannot write sweep file ({e.strerror})') from e


def read_sweep_frame(path):
    """Sweep CSV as a DataFrame, validating the header."""
    try:
        frame = pd.read_csv(path, dtype={'cluster_id': str, 'algorithm': str, 'channel_seed': str})
    except OSError as e:
        raise PersistenceError(path, f'cannot read sweep file ({e.strerror})') from e
    except pd.errors.ParserError as e:
        raise PersistenceError(path, f'malformed sweep file ({e})') from e
    if list(frame.columns) != SWEEP_COLUMNS:
        raise PersistenceError(path, f'unexpected sweep header {list(frame.columns)}')
    return frame


def _seed_value(value):
    text = str(value)
    return int(text) if text.lstrip('-').isdigit() else text


def read_sweep_csv(path):
    frame = read_sweep_frame(path)
    return [
        SweepRecord(
            snr_db=float(row.snr_db),
            algorithm=row.algorithm,
            cluster_id=row.cluster_id,
            rate_bits=float(row.rate_bits),
            occupancy_percent=float(row.occupancy_percent),
            channel_seed=_seed_value(row.channel_seed),
            init_seed=int(row.init_seed),
        )
        for row in frame.itertuples(index=False)
    ]


def write_trace_csv(trace, path):
    """Per-iteration trace rows (as recorded by the solvers) to CSV."""
    try:
        pd.DataFrame(trace).to_csv(path, index=False, float_format='%.17g')
    except OSError as e:
        raise PersistenceError(path, f'cannot write trace file ({e.strerror})') from e
