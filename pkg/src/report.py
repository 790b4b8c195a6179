"""
Render stored sweep results as Markdown tables, plot-ready CSV and a
minimal SVG line plot.
"""

import glob
import logging
import os
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from src.errors import PersistenceError
from src.experiments import UNCONVERGED
from src.persistence import SWEEP_COLUMNS, read_sweep_frame

logger = logging.getLogger(__name__)

PLOT_COLUMNS = ['snr_db', 'algorithm', 'series', 'rate_bits']
AVERAGE_SERIES = 'average'

SVG_WIDTH = 640
SVG_HEIGHT = 400
SVG_MARGIN = 50
SVG_COLORS = ['#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b', '#17becf', '#7f7f7f']


def load_results(path):
    """
    Sweep records from one CSV file or from every sweep CSV in a directory.

    Returns:
    --------
    frame : pd.DataFrame
        Columns as in the sweep CSV header.
    """
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, '**', '*.csv'), recursive=True))
        frames = []
        for file in files:
            try:
                frames.append(read_sweep_frame(file))
            except PersistenceError as e:
                logger.info('Skipping %s: %s', file, e)
        if not frames:
            raise PersistenceError(path, 'no sweep files found')
        return pd.concat(frames, ignore_index=True)
    return read_sweep_frame(path)


def _snr_label(snr_db):
    return f'{snr_db:g} dB'


def _cluster_sort_key(label):
    return int(label[1:]) if label[1:].isdigit() else np.inf


def sweep_table(frame, algorithm, channel_seed):
    """
    Rate (occupancy) per mode and SNR for one algorithm on one channel.

    Returns:
    --------
    table : pd.DataFrame
        Index: mode labels F1, F2, ... then 'Average rate'; columns: SNR
        labels. Cells read 'rate (occupancy)' with 2 and 1 decimals.
    """
    rows = frame[(frame['algorithm'] == algorithm) & (frame['channel_seed'].astype(str) == str(channel_seed))]
    converged = rows[rows['cluster_id'] != UNCONVERGED]
    snrs = sorted(rows['snr_db'].unique())

    stats = (
        converged.groupby(['cluster_id', 'snr_db'])
        .agg(rate_bits=('rate_bits', 'mean'), occupancy_percent=('occupancy_percent', 'first'))
    )
    labels = sorted(converged['cluster_id'].unique(), key=_cluster_sort_key)
    table = pd.DataFrame('', index=labels + ['Average rate'], columns=[_snr_label(s) for s in snrs])
    for (label, snr), row in stats.iterrows():
        table.loc[label, _snr_label(snr)] = f'{row.rate_bits:.2f} ({row.occupancy_percent:.1f})'
    average = converged.groupby('snr_db')['rate_bits'].mean()
    for snr, value in average.items():
        table.loc['Average rate', _snr_label(snr)] = f'{value:.2f}'
    return table


def _markdown(table, first_header='Mode'):
    header = [first_header] + list(table.columns)
    lines = [
        '| ' + ' | '.join(header) + ' |',
        '|' + '|'.join(['---'] * len(header)) + '|',
    ]
    for label, row in table.iterrows():
        lines.append('| ' + ' | '.join([str(label)] + [str(v) for v in row.tolist()]) + ' |')
    return '\n'.join(lines)


def render_markdown(frame):
    """
    One table per (algorithm, channel) with per-mode rate and occupancy
    rows, plus unconverged counts where any run failed.
    """
    sections = ['# Sum rate (bits) and fixed-point occupancy (%)', '']
    groups = frame.groupby(['algorithm', frame['channel_seed'].astype(str)], sort=True)
    for (algorithm, channel_seed), rows in groups:
        sections.append(f'## {algorithm}, channel {channel_seed}')
        sections.append('')
        sections.append(_markdown(sweep_table(frame, algorithm, channel_seed)))
        failed = rows[rows['cluster_id'] == UNCONVERGED].groupby('snr_db').size()
        if not failed.empty:
            sections.append('')
            counts = ', '.join(f'{_snr_label(s)}: {n}' for s, n in failed.items())
            sections.append(f'Unconverged runs (excluded): {counts}')
        sections.append('')
    return '\n'.join(sections)


def plot_frame(frame):
    """
    Rate-vs-SNR series: one per mode plus the average over converged runs.

    Returns:
    --------
    plot : pd.DataFrame
        Columns snr_db, algorithm, series, rate_bits.
    """
    converged = frame[frame['cluster_id'] != UNCONVERGED]
    per_mode = (
        converged.groupby(['snr_db', 'algorithm', 'cluster_id'])['rate_bits'].mean()
        .reset_index()
        .rename(columns={'cluster_id': 'series'})
    )
    average = converged.groupby(['snr_db', 'algorithm'])['rate_bits'].mean().reset_index()
    average['series'] = AVERAGE_SERIES
    plot = pd.concat([per_mode, average[PLOT_COLUMNS]], ignore_index=True)
    return plot[PLOT_COLUMNS].sort_values(['algorithm', 'series', 'snr_db']).reset_index(drop=True)


def render_svg(plot, title='Sum rate vs SNR'):
    """
    Minimal SVG line plot of a ``plot_frame`` result, returned as text.
    """
    if plot.empty:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    else:
        x_lo, x_hi = float(plot['snr_db'].min()), float(plot['snr_db'].max())
        y_lo, y_hi = 0.0, float(plot['rate_bits'].max())
    x_hi = x_hi if x_hi > x_lo else x_lo + 1.0
    y_hi = y_hi if y_hi > y_lo else y_lo + 1.0

    def sx(x):
        return SVG_MARGIN + (x - x_lo) / (x_hi - x_lo) * (SVG_WIDTH - 2 * SVG_MARGIN)

    def sy(y):
        return SVG_HEIGHT - SVG_MARGIN - (y - y_lo) / (y_hi - y_lo) * (SVG_HEIGHT - 2 * SVG_MARGIN)

    parts = [
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{SVG_WIDTH}' height='{SVG_HEIGHT}'>",
        f"<text x='{SVG_WIDTH / 2:.1f}' y='20' text-anchor='middle'>{escape(title)}</text>",
        f"<line x1='{SVG_MARGIN}' y1='{sy(y_lo):.1f}' x2='{SVG_WIDTH - SVG_MARGIN}' y2='{sy(y_lo):.1f}' stroke='black'/>",
        f"<line x1='{SVG_MARGIN}' y1='{sy(y_lo):.1f}' x2='{SVG_MARGIN}' y2='{SVG_MARGIN}' stroke='black'/>",
        f"<text x='{SVG_WIDTH / 2:.1f}' y='{SVG_HEIGHT - 10}' text-anchor='middle'>SNR (dB)</text>",
        f"<text x='15' y='{SVG_HEIGHT / 2:.1f}' transform='rotate(-90 15 {SVG_HEIGHT / 2:.1f})' "
        f"text-anchor='middle'>Sum rate (bits)</text>",
        f"<text x='{SVG_MARGIN}' y='{SVG_HEIGHT - SVG_MARGIN + 15}' text-anchor='middle'>{x_lo:g}</text>",
        f"<text x='{SVG_WIDTH - SVG_MARGIN}' y='{SVG_HEIGHT - SVG_MARGIN + 15}' text-anchor='middle'>{x_hi:g}</text>",
        f"<text x='{SVG_MARGIN - 5}' y='{SVG_MARGIN}' text-anchor='end'>{y_hi:.1f}</text>",
    ]
    for i, ((algorithm, series), rows) in enumerate(plot.groupby(['algorithm', 'series'], sort=True)):
        rows = rows.sort_values('snr_db')
        color = SVG_COLORS[i % len(SVG_COLORS)]
        points = ' '.join(f'{sx(x):.1f},{sy(y):.1f}' for x, y in zip(rows['snr_db'], rows['rate_bits']))
        parts.append(f"<polyline fill='none' stroke='{color}' points='{points}'/>")
        parts.append(
            f"<text x='{SVG_WIDTH - SVG_MARGIN + 5}' y='{SVG_MARGIN + 14 * i}' fill='{color}' font-size='10'>"
            f"{escape(f'{algorithm} {series}')}</text>"
        )
    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


def write_report(frame, out_dir, formats=('md', 'csv')):
    """
    Write report.md, plot.csv and/or plot.svg into ``out_dir``.

    Returns:
    --------
    paths : list of str
    """
    missing = [c for c in SWEEP_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"sweep frame lacks columns: {', '.join(missing)}")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise PersistenceError(out_dir, f'cannot create report directory ({e.strerror})') from e

    plot = plot_frame(frame)
    outputs = {
        'md': ('report.md', lambda: render_markdown(frame)),
        'csv': ('plot.csv', lambda: plot.to_csv(index=False, float_format='%.6f')),
        'svg': ('plot.svg', lambda: render_svg(plot)),
    }
    paths = []
    for fmt in formats:
        if fmt not in outputs:
            raise ValueError(f'unknown report format: {fmt!r}')
        name, render = outputs[fmt]
        path = os.path.join(out_dir, name)
        try:
            with open(path, 'w') as f:
                f.write(render())
        except OSError as e:
            raise PersistenceError(path, f'cannot write report ({e.strerror})') from e
        paths.append(path)
    return paths
