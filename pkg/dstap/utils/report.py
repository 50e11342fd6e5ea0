import io

import numpy as np
import pandas as pd
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from dstap.utils.logger import logger


def print_dataframe(df, title, print_index=True, filepath=None):
    buffer = io.StringIO()
    print('\n'+title, file=buffer)
    print(df.to_string(index=print_index), file=buffer)
    logger.info(buffer.getvalue())
    if filepath is not None:
        with open(filepath, 'w') as f:
            f.write(buffer.getvalue())


def save_loss_trace(losses, filepath):
    df = pd.DataFrame({'epoch': np.arange(1, len(losses) + 1), 'loss': losses})
    df.to_csv(path_or_buf=filepath, index=False)
    return df


def plot_loss_trace(losses, title='Training Loss', filepath=None):
    plt.figure(figsize=(8, 5))
    plt.plot(np.arange(1, len(losses) + 1), losses, marker='o', markersize=3)
    plt.xlabel("Epoch")
    plt.ylabel("MSE (normalized)")
    plt.yscale('log')
    plt.grid(True)
    if title:
        plt.title(title)
    _finish(filepath)


def plot_learning_curve(df, title='Localization Error vs. Dataset Size', filepath=None):
    """`df` has the learning-curve schema; seeds are averaged per N, with min/max as a band."""
    g = df.groupby('N').agg(['mean', 'min', 'max'])
    n = g.index.values
    plt.figure(figsize=(8, 5))
    for col, label, color in [('err_cnn_m', 'Regression CNN', 'red'), ('err_mvdr_m', 'MVDR peak cell', 'black')]:
        plt.plot(n, g[col]['mean'], marker='o', label=label, color=color, linewidth=1.5)
        plt.fill_between(n, g[col]['min'], g[col]['max'], color=color, alpha=0.1)
    plt.xlabel("Number of examples N")
    plt.ylabel("Mean localization error (m)")
    plt.legend()
    plt.grid(True)
    if title:
        plt.title(title)
    _finish(filepath)


def plot_heatmap_tensor(values, range_grid, angle_grid, title=None, filepath=None):
    """One panel per range bin, azimuth on the vertical axis, in dB."""
    values = np.asarray(values, dtype=np.float64)
    db = 10.0 * np.log10(np.maximum(values, np.finfo(np.float64).tiny))
    n_bins = values.shape[0]
    extent = [angle_grid.phi_min, angle_grid.phi_max, angle_grid.theta_min, angle_grid.theta_max]
    fig, axes = plt.subplots(1, n_bins, figsize=(3 * n_bins, 4), squeeze=False)
    for b, ax in enumerate(axes[0]):
        im = ax.imshow(db[b], origin='lower', aspect='auto', extent=extent,
                       vmin=db.min(), vmax=db.max(), cmap='viridis')
        ax.set_title(f"r = {range_grid.bin_center(b):.0f} m")
        ax.set_xlabel("elevation (deg)")
        if b == 0:
            ax.set_ylabel("azimuth (deg)")
    fig.colorbar(im, ax=axes[0].tolist(), label="MVDR power (dB)")
    if title:
        fig.suptitle(title)
    _finish(filepath)


def _finish(filepath):
    if filepath is None:
        plt.show()
    else:
        plt.savefig(filepath, bbox_inches='tight')
    plt.close('all')


# --- per-bin raster export -------------------------------------------------

PGM_MAXVAL = 65535


def pgm_pixels(values, vmax):
    """Linear power -> 16-bit gray levels; `vmax` (the tensor max) maps to full scale."""
    values = np.asarray(values, dtype=np.float64)
    if vmax <= 0:
        return np.zeros(values.shape, dtype='>u2')
    return np.rint(np.clip(values / vmax, 0.0, 1.0) * PGM_MAXVAL).astype('>u2')


def write_pgm(filepath, values, vmax):
    """Binary (P5) 16-bit PGM; azimuth rows, elevation columns."""
    pixels = pgm_pixels(values, vmax)
    height, width = pixels.shape
    with open(filepath, 'wb') as f:
        f.write(f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode('ascii'))
        f.write(pixels.tobytes())


def read_pgm(filepath):
    with open(filepath, 'rb') as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode('ascii'))
    pos += 1
    assert tokens[0] == 'P5', f"{filepath} is not a binary PGM"
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.frombuffer(data, dtype='>u2', count=width * height, offset=pos).reshape(height, width), maxval


def save_heatmap_slice_csv(values, angle_grid, filepath):
    """Long-format (theta_deg, phi_deg, power) table for one range bin."""
    thetas, phis = np.meshgrid(angle_grid.thetas, angle_grid.phis, indexing='ij')
    df = pd.DataFrame({'theta_deg': thetas.ravel(), 'phi_deg': phis.ravel(),
                       'power': np.asarray(values, dtype=np.float64).ravel()})
    df.to_csv(path_or_buf=filepath, index=False)
    return df
