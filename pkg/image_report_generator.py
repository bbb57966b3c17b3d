"""
图片报告生成器
把任意 CSV（直方图 / g² 曲线 / 光谱图 / 脉冲面积 / 时间标签）渲染成带坐标轴与标签的 SVG

SVG 输出固定 hashsalt 且不写日期元数据，同一输入两次渲染逐字节一致。
"""

import os

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

import config  # noqa: E402
from error_handler import DataFormatError, log_event  # noqa: E402

plt.rcParams['svg.hashsalt'] = config.PROGRAM_NAME
plt.rcParams['svg.fonttype'] = 'path'
plt.rcParams['font.size'] = 9
plt.rcParams['figure.figsize'] = (6.4, 4.0)


class ImageReportGenerator:
    """CSV → SVG 渲染器"""

    def __init__(self, title=None):
        """
        Args:
            title: 图标题（默认取文件名）
        """
        self.title = title
        self.colors = {
            'primary': '#3498DB',
            'secondary': '#E74C3C',
            'text': '#2C3E50',
        }

    def detect_kind(self, columns):
        """由表头判断 CSV 类型"""
        columns = list(columns)
        known = {
            ('tau_ps', 'counts', 'g2'): 'histogram',
            ('tau_ps', 'g2'): 'curve',
            ('angle_deg', 'energy_ueV', 'intensity'): 'spectral_map',
            ('area_au',): 'areas',
            ('time_ps', 'detector'): 'tags',
            ('time_ps', 'species', 'polarization', 'pulse_index'): 'events',
        }
        kind = known.get(tuple(columns))
        if kind is None:
            raise DataFormatError(f"cannot render CSV with columns {','.join(columns)}")
        return kind

    def render(self, csv_path, svg_path):
        """
        渲染 CSV 到 SVG

        Args:
            csv_path: 输入 CSV
            svg_path: 输出 SVG

        Returns:
            str: svg_path
        """
        if not os.path.exists(csv_path):
            raise DataFormatError(f"file not found: {csv_path}")
        frame = pd.read_csv(csv_path)
        kind = self.detect_kind(frame.columns)

        fig, ax = plt.subplots()
        getattr(self, f"_draw_{kind}")(ax, frame)
        ax.set_title(self.title or os.path.basename(csv_path))
        fig.tight_layout()

        os.makedirs(os.path.dirname(os.path.abspath(svg_path)), exist_ok=True)
        fig.savefig(svg_path, format='svg', metadata={'Date': None})
        plt.close(fig)

        log_event('REPORT', kind=kind, source=csv_path, output=svg_path)
        return svg_path

    def _draw_histogram(self, ax, frame):
        tau_ns = frame['tau_ps'].to_numpy() / 1000.0
        if frame['g2'].notna().all():
            ax.plot(tau_ns, frame['g2'], color=self.colors['primary'], linewidth=0.8)
            ax.set_ylabel('g²(τ)')
        else:
            ax.plot(tau_ns, frame['counts'], color=self.colors['primary'], linewidth=0.8, drawstyle='steps-mid')
            ax.set_ylabel('Coincidences')
        ax.set_xlabel('τ (ns)')

    def _draw_curve(self, ax, frame):
        ax.plot(frame['tau_ps'].to_numpy() / 1000.0, frame['g2'], color=self.colors['primary'], linewidth=1.0)
        ax.axhline(1.0, color=self.colors['text'], linewidth=0.5, linestyle='--')
        ax.set_xlabel('τ (ns)')
        ax.set_ylabel('g²(τ)')

    def _draw_spectral_map(self, ax, frame):
        table = frame.pivot_table(index='angle_deg', columns='energy_ueV', values='intensity', aggfunc='first')
        mesh = ax.pcolormesh(table.columns.to_numpy(), table.index.to_numpy(), table.to_numpy(),
                             shading='nearest', cmap='viridis', rasterized=False)
        ax.figure.colorbar(mesh, ax=ax, label='Intensity (a.u.)')
        ax.set_xlabel('Energy (μeV)')
        ax.set_ylabel('Polarization angle (°)')

    def _draw_areas(self, ax, frame):
        areas = frame['area_au'].to_numpy()
        bins = np.linspace(areas.min(), areas.max(), 200) if areas.size else 10
        ax.hist(areas, bins=bins, color=self.colors['primary'], log=True)
        ax.set_xlabel('Pulse area (a.u.)')
        ax.set_ylabel('Events')

    def _draw_tags(self, ax, frame):
        for name, color in (('D0', self.colors['primary']), ('D1', self.colors['secondary'])):
            times = frame.loc[frame['detector'] == name, 'time_ps'].to_numpy() / 1e6
            ax.hist(times, bins=100, histtype='step', color=color, label=name)
        ax.set_xlabel('Time (μs)')
        ax.set_ylabel('Tags per bin')
        ax.legend()

    def _draw_events(self, ax, frame):
        for species, color in (('XX', self.colors['primary']), ('X', self.colors['secondary'])):
            times = frame.loc[frame['species'] == species, 'time_ps'].to_numpy() / 1e6
            ax.hist(times, bins=100, histtype='step', color=color, label=species)
        ax.set_xlabel('Time (μs)')
        ax.set_ylabel('Emissions per bin')
        ax.legend()


def render_csv(csv_path, svg_path, title=None):
    """便捷入口"""
    return ImageReportGenerator(title=title).render(csv_path, svg_path)
