#!/usr/bin/env python3
"""
孪生光子级联模拟与分析 - 命令行入口
模拟、探测、关联、拟合、速率预算、HOM、PNR、光谱以及 SVG 报告

参数优先级：命令行 > --config 运行配置文件 > 环境默认值（.env）。
每次运行都写 <输出>.provenance.json；台账开启时同时写入 SQLite。
"""

import argparse
import os
import sys

import numpy as np

import config
import correlator
import hom
import mc_sim
import model_core
import pnr
import report_generator as io
import spectra
from error_handler import (EXIT_OK, EXIT_USAGE, ConfigError, exit_code_for, log_event,
                           log_exception)


# ============================================
# 参数解析工具
# ============================================
def _param(args, run_config, key, default=None):
    """命令行值 > 配置文件值 > 默认值"""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in run_config:
        return run_config[key]
    return default


def _require(args, run_config, key):
    value = _param(args, run_config, key)
    if value is None:
        raise ConfigError(f"missing required parameter '{key}' (flag --{key.replace('_', '-')} or config key)")
    return value


def _rates(args, run_config):
    pump = getattr(args, 'pump', None)
    p_b = pump if pump is not None else _require(args, run_config, 'p_b')
    p_x = pump if pump is not None else _require(args, run_config, 'p_x')
    return model_core.RateSet(
        gamma_b=_require(args, run_config, 'gamma_b'),
        gamma_x=_require(args, run_config, 'gamma_x'),
        p_b=p_b,
        p_x=p_x,
    )


def _output(args, run_config, default_name):
    return _param(args, run_config, 'output') or os.path.join(config.OUTPUT_DIR, default_name)


def _finish(args, run_config, output_path, outputs, result=None):
    """写溯源记录，并在台账开启时登记"""
    arguments = {key: value for key, value in vars(args).items() if key not in ('func',) and value is not None}
    record = io.build_provenance(args.command, arguments, run_config, seed=_seed(args, run_config),
                                 threads=_threads(args, run_config), outputs=outputs)
    if result is not None:
        record['result'] = result
    path = io.write_provenance(record, output_path)

    if config.LEDGER_ENABLED:
        try:
            from database import record_run
            record_run(record, output_path=output_path)
        except Exception as e:
            log_exception(e, context='ledger')
            log_event('LEDGER', level='WARNING', action='skipped', reason=type(e).__name__)
    return path


def _seed(args, run_config):
    return int(_param(args, run_config, 'seed', config.DEFAULT_SEED))


def _threads(args, run_config):
    return int(_param(args, run_config, 'threads', config.DEFAULT_THREADS))


def _floats(text, expected=None):
    try:
        values = [float(part) for part in str(text).split(',') if part.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma separated numbers, got '{text}'") from e
    if expected is not None and len(values) != expected:
        raise ConfigError(f"expected {expected} comma separated numbers, got '{text}'")
    return values


# ============================================
# 子命令
# ============================================
def cmd_simulate_cw(args, run_config):
    """CW 轨迹 → 事件 CSV"""
    rates = _rates(args, run_config)
    duration_ns = float(_require(args, run_config, 'duration_ns'))
    shards = int(_param(args, run_config, 'shards', 1))
    events = mc_sim.simulate_cw(rates, duration_ns * model_core.PS_PER_NS, _seed(args, run_config),
                                shards=shards, threads=_threads(args, run_config))
    output = _output(args, run_config, 'events_cw.csv')
    io.write_events(events, output)
    _finish(args, run_config, output, [output], {'events': len(events)})
    print(f"✓ 已生成: {output} ({len(events)} 个发射事件)")


def cmd_simulate_pulsed(args, run_config):
    """脉冲激发 → 事件 CSV"""
    prep = mc_sim.PulsePrep(
        repetition_rate_hz=float(_require(args, run_config, 'rep_rate_hz')),
        prob_b=float(_param(args, run_config, 'prob_b', 1.0)),
        prob_h=float(_param(args, run_config, 'prob_h', 0.0)),
        prob_v=float(_param(args, run_config, 'prob_v', 0.0)),
    )
    tau_xx = _param(args, run_config, 'tau_xx_ns')
    tau_x = _param(args, run_config, 'tau_x_ns')
    if tau_xx is not None and tau_x is not None:
        decay = mc_sim.lifetimes_to_decay_rates(tau_xx, tau_x)
    else:
        decay = mc_sim.DecayRates(_require(args, run_config, 'gamma_b'), _require(args, run_config, 'gamma_x'))

    n_pulses = int(_require(args, run_config, 'n_pulses'))
    events = mc_sim.simulate_pulsed(prep, decay, n_pulses, _seed(args, run_config))
    output = _output(args, run_config, 'events_pulsed.csv')
    io.write_events(events, output)
    _finish(args, run_config, output, [output], {'events': len(events)})
    print(f"✓ 已生成: {output} ({len(events)} 个发射事件, {n_pulses} 个脉冲)")


def cmd_detect(args, run_config):
    """事件 → 探测链 → 时间标签 CSV"""
    events = io.read_events(args.events)
    detection = mc_sim.DetectionConfig(
        polarization_filter=_param(args, run_config, 'polarization_filter', 'none'),
        species_filter=_param(args, run_config, 'species_filter', 'none'),
        efficiency=float(_param(args, run_config, 'efficiency', 1.0)),
        jitter_fwhm_ps=float(_param(args, run_config, 'jitter_fwhm_ps', 0.0)),
        splitter=_param(args, run_config, 'splitter', 'none'),
        dark_rate_hz=float(_param(args, run_config, 'dark_rate_hz', 0.0)),
        dead_time_ps=float(_param(args, run_config, 'dead_time_ps', 0.0)),
    )
    duration_ns = _param(args, run_config, 'duration_ns')
    duration_ps = None if duration_ns is None else int(round(duration_ns * model_core.PS_PER_NS))
    d0, d1 = mc_sim.detect(events, detection, _seed(args, run_config), duration_ps=duration_ps)
    output = _output(args, run_config, 'tags.csv')
    io.write_tags(d0, d1, output)
    _finish(args, run_config, output, [output], {'tags_d0': int(d0.size), 'tags_d1': int(d1.size)})
    print(f"✓ 已生成: {output} (D0={d0.size}, D1={d1.size})")


def cmd_correlate(args, run_config):
    """时间标签 → 符合直方图 CSV（可归一化为 g²）"""
    if args.tags:
        tags_a, tags_b = io.read_tags(args.tags)
    elif args.start and args.stop:
        tags_a = np.sort(np.concatenate(io.read_tags(args.start)))
        tags_b = np.sort(np.concatenate(io.read_tags(args.stop)))
    else:
        raise ConfigError("correlate needs --tags FILE or both --start FILE and --stop FILE")

    duration_ns = _param(args, run_config, 'duration_ns')
    hist = correlator.correlate(
        tags_a, tags_b,
        bin_width_ps=int(_param(args, run_config, 'bin_width_ps', config.BIN_WIDTH_PS)),
        window_ps=int(_param(args, run_config, 'window_ps', 20000)),
        acquisition_time_s=None if duration_ns is None else duration_ns * 1e-9,
    )

    g2_values = None
    if not args.raw:
        if hist.rate_a_hz and hist.rate_b_hz and hist.acquisition_time_s:
            g2_values = correlator.normalize_cw(hist).values
        else:
            log_event('CORR', level='WARNING', action='normalization_skipped', reason='zero_rate')

    output = _output(args, run_config, 'histogram.csv')
    io.write_histogram(hist, output, g2_values)
    _finish(args, run_config, output, [output], {'coincidences': int(hist.counts.sum())})
    print(f"✓ 已生成: {output} ({hist.counts.size} bins, {int(hist.counts.sum())} 个符合)")


def cmd_fit_g2(args, run_config):
    """直方图/曲线 → IRF 卷积模型拟合 → JSON"""
    kind = args.kind
    curve = io.read_curve(args.input, kind='cross' if kind == 'cross' else 'auto-composite')
    irf = model_core.InstrumentResponse(float(_param(args, run_config, 'irf_fwhm_ps', config.IRF_FWHM_PS)))
    init = _rates(args, run_config)
    report = correlator.fit_g2(curve, kind, irf, init, weighting=args.weighting)

    output = _output(args, run_config, f'fit_{kind}.json')
    model_path = os.path.splitext(output)[0] + '.model.csv'
    fitted = model_core.convolve_irf(
        model_core.composite_curve(kind, report.rates, curve.tau_grid, weighting=args.weighting), irf)
    io.write_json(report.to_dict(), output)
    io.write_curve(fitted, model_path)
    _finish(args, run_config, output, [output, model_path], {'g_fit_0': report.g_fit_0})
    low, high = report.interval('g_fit_0')
    print(f"✓ g_{kind}(0) = {report.g_fit_0:.4g}  (68%: {low:.4g} – {high:.4g})")
    print(f"✓ 已生成: {output}")
    print(f"✓ 已生成: {model_path}")


def cmd_alpha(args, run_config):
    """α = g_auto(0) / g_cross(0)"""
    g_auto = args.g_auto if args.g_auto is not None else _fit_value(args.auto_fit)
    g_cross = args.g_cross if args.g_cross is not None else _fit_value(args.cross_fit)
    alpha = correlator.alpha_ratio(g_auto, g_cross)
    output = _output(args, run_config, 'alpha.json')
    io.write_json({'g_auto_0': g_auto, 'g_cross_0': g_cross, 'alpha': alpha}, output)
    _finish(args, run_config, output, [output], {'alpha': alpha})
    print(f"α = {alpha:.4f}")


def _fit_value(path):
    if not path:
        raise ConfigError("alpha needs --g-auto/--g-cross values or --auto-fit/--cross-fit JSON files")
    return float(io.read_json(path)['g_fit_0'])


def cmd_tpr_cw(args, run_config):
    """CW 孪生光子速率"""
    budget = correlator.twin_rate_cw(args.n_spcm, args.eps, args.eta, args.alpha)
    output = _output(args, run_config, 'tpr_cw.json')
    io.write_json(budget.to_dict(), output)
    _finish(args, run_config, output, [output], {'tpr_hz': budget.tpr_hz})
    print(f"twin fraction = {budget.twin_detect_fraction:.4f}")
    print(f"TPR = {budget.tpr_hz / 1e3:.1f} kHz")


def cmd_tpr_pulsed(args, run_config):
    """脉冲孪生光子速率（p_twin 可取自重建分布 JSON）"""
    rep_rate = float(_require(args, run_config, 'rep_rate_hz'))
    if args.distribution:
        data = io.read_json(args.distribution)
        dist = pnr.PhotonNumberDist(data['p'], plane=data.get('plane', 'source'))
        tpr = pnr.pulsed_twin_rate_from_distribution(dist, rep_rate, args.eta)
        p_twin = dist.p(2)
    else:
        if args.p_twin is None:
            raise ConfigError("tpr-pulsed needs --p-twin or --distribution")
        p_twin = args.p_twin
        tpr = correlator.twin_rate_pulsed(rep_rate, p_twin, args.eta)
    output = _output(args, run_config, 'tpr_pulsed.json')
    io.write_json({'rep_rate_hz': rep_rate, 'p_twin': p_twin, 'eta_lens': args.eta, 'tpr_hz': tpr}, output)
    _finish(args, run_config, output, [output], {'tpr_hz': tpr})
    print(f"TPR = {tpr / 1e3:.2f} kHz")


def cmd_hom(args, run_config):
    """脉冲事件 → HOM 共/交叉偏振直方图 + 可见度报告"""
    events = io.read_events(args.events)
    n_pulses = int(_param(args, run_config, 'n_pulses', 0)) or int(events['pulse_index'].max() + 1 if len(events) else 0)
    hom_config = hom.HomConfig(
        mode_overlap_m=float(_require(args, run_config, 'mode_overlap_m')),
        rep_rate_hz=float(_require(args, run_config, 'rep_rate_hz')),
        n_pulses=n_pulses,
        efficiency=float(_param(args, run_config, 'efficiency', 1.0)),
        jitter_fwhm_ps=float(_param(args, run_config, 'jitter_fwhm_ps', 0.0)),
    )
    k_range = int(_param(args, run_config, 'k_range', 10))
    hist_co, hist_cross = hom.simulate_hom(events, hom_config, _seed(args, run_config),
                                           bin_width_ps=_param(args, run_config, 'bin_width_ps'), k_range=k_range)
    report = hom.hom_report(hist_co, hist_cross, hom_config.rep_rate_hz, k_range=k_range)
    report['mode_overlap_m'] = hom_config.mode_overlap_m

    output = _output(args, run_config, 'hom.json')
    stem = os.path.splitext(output)[0]
    co_path, cross_path = f"{stem}_co.csv", f"{stem}_cross.csv"
    io.write_histogram(hist_co, co_path)
    io.write_histogram(hist_cross, cross_path)
    io.write_json(report, output)
    _finish(args, run_config, output, [output, co_path, cross_path], {'V': report['V']})
    print(f"✓ g∥(0)/g⊥(0) = {report['ratio']:.4f}")
    print(f"✓ V = {report['V']:.3f} ± {report['V_err']:.3f}")


def _tes_model(args, run_config):
    return pnr.TesModel(unit_area=float(_param(args, run_config, 'unit_area', 1.0)),
                        sigma=float(_param(args, run_config, 'sigma_area', 0.1)))


def cmd_pnr_sim(args, run_config):
    """源端分布 → 二项稀释 → TES 脉冲面积 CSV"""
    source = pnr.PhotonNumberDist([float(_param(args, run_config, f'p{n}', 0.0)) for n in range(4)])
    s = float(_require(args, run_config, 's'))
    detector = pnr.thin_binomial(source, s)
    n_triggers = int(_require(args, run_config, 'n_triggers'))
    areas = pnr.simulate_tes(detector, _tes_model(args, run_config), n_triggers, _seed(args, run_config))
    output = _output(args, run_config, 'areas.csv')
    io.write_areas(areas, output)
    _finish(args, run_config, output, [output], {'detector_q': detector.probabilities})
    print(f"✓ 已生成: {output} ({n_triggers} 次触发)")


def cmd_pnr_reconstruct(args, run_config):
    """比值或脉冲面积 → 源端光子数分布 JSON"""
    s = float(_require(args, run_config, 's'))
    record_dict = None
    if args.areas:
        record = pnr.classify(io.read_areas(args.areas), _tes_model(args, run_config),
                              acquisition_time_s=args.acquisition_time_s or 0.0)
        if args.background:
            record.background_per_hour = _floats(args.background)
            record = pnr.background_subtract(record)
        record_dict = record.to_dict()
        dist = pnr.reconstruct(record, s, n_resamples=args.resamples, seed=_seed(args, run_config))
    else:
        if args.r21 is None or args.r10 is None:
            raise ConfigError("pnr-reconstruct needs --r21 and --r10, or --areas FILE")
        dist = pnr.reconstruct((args.r21, args.r10), s)

    output = _output(args, run_config, 'distribution.json')
    payload = dist.to_dict()
    if record_dict is not None:
        payload['record'] = record_dict
    io.write_json(payload, output)
    _finish(args, run_config, output, [output], {'p': dist.probabilities})
    for n, p in enumerate(dist.probabilities):
        print(f"p{n} = {p:.4f}")


def cmd_spectra_sim(args, run_config):
    """合成偏振分辨光谱图 CSV"""
    params = spectra.QuadrupletParams(
        center_energy_uev=float(_param(args, run_config, 'center_energy_uev', 0.0)),
        delta_fss_uev=float(_param(args, run_config, 'delta_fss_uev', 51.0)),
        binding_sign=_param(args, run_config, 'binding_sign', 'binding'),
        linewidth_x_uev=float(_param(args, run_config, 'linewidth_x_uev', 30.0)),
        linewidth_xx_uev=float(_param(args, run_config, 'linewidth_xx_uev', 30.0)),
        intensity_ratio=float(_param(args, run_config, 'intensity_ratio', 1.0)),
        principal_axis_deg=float(_param(args, run_config, 'principal_axis_deg', 0.0)),
    )
    n_angles = int(_param(args, run_config, 'n_angles', 36))
    angles = np.arange(n_angles) * (360.0 / n_angles)
    margin = 10 * max(params.linewidth_x_uev, params.linewidth_xx_uev) + params.delta_fss_uev
    energy = np.arange(params.center_energy_uev - margin, params.center_energy_uev + margin + 0.5, 1.0)
    resolution = spectra.DEFAULT_RESOLUTION_UEV if args.resolution else None

    spectral_map = spectra.synthesize_map(params, angles, energy, float(_param(args, run_config, 'noise_level', 0.0)),
                                          _seed(args, run_config), resolution_uev=resolution)
    output = _output(args, run_config, 'spectral_map.csv')
    io.write_spectral_map(spectral_map, output)
    _finish(args, run_config, output, [output])
    print(f"✓ 已生成: {output} ({n_angles} 个角度 × {energy.size} 个能量点)")


def cmd_spectra_fit(args, run_config):
    """光谱图 → 逐角度四 Lorentz 拟合 + FSS 汇总 JSON"""
    resolution = spectra.DEFAULT_RESOLUTION_UEV if args.resolution else None
    spectral_map = io.read_spectral_map(args.input, _param(args, run_config, 'binding_sign', 'binding'), resolution)
    spectra.fit_map(spectral_map, threads=_threads(args, run_config))
    summary = spectra.extract_fss(spectral_map)

    output = _output(args, run_config, 'spectra_fit.json')
    io.write_json({'summary': summary.to_dict(), 'fits': [fit.to_dict() for fit in spectral_map.fits]}, output)
    _finish(args, run_config, output, [output], {'delta_fss_mean_ueV': summary.delta_fss_mean})
    print(f"✓ ΔE_FSS = {summary.delta_fss_mean:.1f} ± {summary.delta_fss_std:.1f} μeV ({summary.n_fits} 个拟合)")
    print(f"{'✓' if summary.degenerate_h_line else '⚠'} H 通道简并: {summary.degenerate_h_line}")


def cmd_report(args, run_config):
    """CSV → SVG"""
    from image_report_generator import render_csv

    output = args.output or f"{os.path.splitext(args.input)[0]}.svg"
    render_csv(args.input, output, title=args.title)
    _finish(args, run_config, output, [output])
    print(f"✓ 已生成: {output}")


def cmd_ledger(args, run_config):
    """台账查询"""
    import database

    if args.action == 'health':
        ok = database.ensure_ledger_health(database.get_db_path())
        print("✓ 台账健康" if ok else "✗ 台账无法访问")
        return
    if args.action == 'list':
        for run in database.list_runs(limit=args.limit):
            print(f"{run['id']:>6}  {run['created_at']}  {run['command']:<16} seed={run['seed']}  {run['output_path']}")
        return

    stats = database.get_ledger_stats()
    print("=" * 60)
    print("台账统计")
    print("=" * 60)
    print(f"总运行数: {stats['total_runs']}")
    for command, count in stats['runs_by_command'].items():
        print(f"  {command}: {count}")
    print(f"文件大小: {stats['database_size_mb']} MB")


def cmd_check_config(args, run_config):
    """打印有效配置"""
    config.print_config()
    if run_config:
        print("运行配置:")
        for key in sorted(run_config):
            print(f"  {key} = {run_config[key]}")
        print(f"config_hash: {config.config_hash(run_config)}")
    if not config.validate_config():
        raise ConfigError("environment configuration is inconsistent")
    print("✓ 配置验证通过")


# ============================================
# 参数定义
# ============================================
def _add_rate_flags(parser):
    parser.add_argument('--gamma-b', dest='gamma_b', type=float, help='每个双激子衰减通道的速率 (1/ns)')
    parser.add_argument('--gamma-x', dest='gamma_x', type=float, help='激子衰减速率 (1/ns)')
    parser.add_argument('--p-b', dest='p_b', type=float, help='激子→双激子泵浦速率 (1/ns)')
    parser.add_argument('--p-x', dest='p_x', type=float, help='基态→激子泵浦速率 (1/ns)')
    parser.add_argument('--pump', type=float, help='同时设置 p_b = p_x (1/ns)')


def _add_output(parser):
    parser.add_argument('--output', '-o', help='输出文件')


def build_parser():
    """构造命令行解析器"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='随机种子')
    common.add_argument('--threads', type=int, default=argparse.SUPPRESS, help='最大工作进程数')
    common.add_argument('--config', default=argparse.SUPPRESS, help='运行配置文件（key = value）')

    parser = argparse.ArgumentParser(
        prog=config.PROGRAM_NAME,
        description='量子点孪生光子级联模拟与分析工具',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[common],
        epilog="""
示例:
  # CW 模拟 → H 通道 HBT 探测 → 关联
  python main.py simulate-cw --gamma-b 1 --gamma-x 1 --pump 0.1 --duration-ns 1e6 -o cw.csv
  python main.py detect --events cw.csv --polarization-filter H --splitter 50:50 --jitter-fwhm-ps 350 -o hbt.csv
  python main.py correlate --tags hbt.csv --window-ps 20000 -o auto.csv

  # 速率预算
  python main.py tpr-cw --n-spcm 103e3 --eps 0.0095 --eta 0.09 --alpha 0.39

  # PNR 重建
  python main.py pnr-reconstruct --r21 1.81e-4 --r10 1.1e-4 --s 5.04e-4

  # 渲染任意 CSV
  python main.py report --input auto.csv -o auto.svg
        """
    )
    subparsers = parser.add_subparsers(dest='command', help='可用命令')

    def sub(name, func, help_text):
        p = subparsers.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=func)
        return p

    p = sub('simulate-cw', cmd_simulate_cw, 'CW 蒙特卡罗轨迹')
    _add_rate_flags(p)
    p.add_argument('--duration-ns', dest='duration_ns', type=float, help='模拟时长 (ns)')
    p.add_argument('--shards', type=int, help='时间分段数')
    _add_output(p)

    p = sub('simulate-pulsed', cmd_simulate_pulsed, '脉冲激发模拟')
    p.add_argument('--rep-rate-hz', dest='rep_rate_hz', type=float, help='重复频率 (Hz)')
    p.add_argument('--prob-b', dest='prob_b', type=float)
    p.add_argument('--prob-h', dest='prob_h', type=float)
    p.add_argument('--prob-v', dest='prob_v', type=float)
    p.add_argument('--tau-xx-ns', dest='tau_xx_ns', type=float, help='双激子寿命 (ns)')
    p.add_argument('--tau-x-ns', dest='tau_x_ns', type=float, help='激子寿命 (ns)')
    p.add_argument('--gamma-b', dest='gamma_b', type=float)
    p.add_argument('--gamma-x', dest='gamma_x', type=float)
    p.add_argument('--n-pulses', dest='n_pulses', type=int)
    _add_output(p)

    p = sub('detect', cmd_detect, '探测链（滤波/效率/分束/抖动/死时间/暗计数）')
    p.add_argument('--events', required=True, help='事件 CSV')
    p.add_argument('--polarization-filter', dest='polarization_filter', choices=['H', 'V', 'none'])
    p.add_argument('--species-filter', dest='species_filter', choices=['X', 'XX', 'none'])
    p.add_argument('--efficiency', type=float)
    p.add_argument('--jitter-fwhm-ps', dest='jitter_fwhm_ps', type=float)
    p.add_argument('--splitter', choices=['none', '50:50'])
    p.add_argument('--dark-rate-hz', dest='dark_rate_hz', type=float)
    p.add_argument('--dead-time-ps', dest='dead_time_ps', type=float)
    p.add_argument('--duration-ns', dest='duration_ns', type=float, help='采集时长（暗计数用）')
    _add_output(p)

    p = sub('correlate', cmd_correlate, '符合直方图')
    p.add_argument('--tags', help='HBT 标签 CSV（D0 起始，D1 终止）')
    p.add_argument('--start', help='起始通道标签 CSV')
    p.add_argument('--stop', help='终止通道标签 CSV')
    p.add_argument('--bin-width-ps', dest='bin_width_ps', type=int)
    p.add_argument('--window-ps', dest='window_ps', type=int)
    p.add_argument('--duration-ns', dest='duration_ns', type=float, help='采集时长（默认取标签跨度）')
    p.add_argument('--raw', action='store_true', help='不写 g2 列')
    _add_output(p)

    p = sub('fit-g2', cmd_fit_g2, 'IRF 卷积模型拟合')
    p.add_argument('--input', required=True, help='直方图或曲线 CSV')
    p.add_argument('--kind', choices=['auto', 'cross'], required=True)
    p.add_argument('--weighting', choices=list(model_core.WEIGHTINGS), default='equal',
                   help='自关联权重：equal 为四项各 ¼（仅 p_B = Γ_X 时与单偏振探测一致）；'
                        'flux 按单偏振通道光子通量加权，与 detect 的偏振滤波输出一致')
    p.add_argument('--irf-fwhm-ps', dest='irf_fwhm_ps', type=float)
    _add_rate_flags(p)
    _add_output(p)

    p = sub('alpha', cmd_alpha, 'α = g_auto(0)/g_cross(0)')
    p.add_argument('--g-auto', dest='g_auto', type=float)
    p.add_argument('--g-cross', dest='g_cross', type=float)
    p.add_argument('--auto-fit', dest='auto_fit', help='fit-g2 输出 JSON（auto）')
    p.add_argument('--cross-fit', dest='cross_fit', help='fit-g2 输出 JSON（cross）')
    _add_output(p)

    p = sub('tpr-cw', cmd_tpr_cw, 'CW 孪生光子速率')
    p.add_argument('--n-spcm', dest='n_spcm', type=float, required=True, help='SPCM 计数率 (Hz)')
    p.add_argument('--eps', type=float, required=True, help='装置效率 ε')
    p.add_argument('--eta', type=float, required=True, help='第一透镜效率 η')
    p.add_argument('--alpha', type=float, required=True, help='孪生比例 α')
    _add_output(p)

    p = sub('tpr-pulsed', cmd_tpr_pulsed, '脉冲孪生光子速率')
    p.add_argument('--rep-rate-hz', dest='rep_rate_hz', type=float)
    p.add_argument('--p-twin', dest='p_twin', type=float)
    p.add_argument('--distribution', help='pnr-reconstruct 输出 JSON')
    p.add_argument('--eta', type=float, required=True)
    _add_output(p)

    p = sub('hom', cmd_hom, 'HOM 干涉模拟与可见度')
    p.add_argument('--events', required=True, help='脉冲事件 CSV')
    p.add_argument('--m', dest='mode_overlap_m', type=float, help='有效不可区分度 M')
    p.add_argument('--rep-rate-hz', dest='rep_rate_hz', type=float)
    p.add_argument('--n-pulses', dest='n_pulses', type=int)
    p.add_argument('--efficiency', type=float)
    p.add_argument('--jitter-fwhm-ps', dest='jitter_fwhm_ps', type=float)
    p.add_argument('--bin-width-ps', dest='bin_width_ps', type=int)
    p.add_argument('--k-range', dest='k_range', type=int)
    _add_output(p)

    p = sub('pnr-sim', cmd_pnr_sim, 'TES 脉冲面积模拟')
    for n in range(4):
        p.add_argument(f'--p{n}', dest=f'p{n}', type=float, help=f'源端 p{n}')
    p.add_argument('--s', type=float, help='端到端成功概率')
    p.add_argument('--n-triggers', dest='n_triggers', type=int)
    p.add_argument('--unit-area', dest='unit_area', type=float)
    p.add_argument('--sigma-area', dest='sigma_area', type=float)
    _add_output(p)

    p = sub('pnr-reconstruct', cmd_pnr_reconstruct, '源端光子数分布重建')
    p.add_argument('--r21', type=float)
    p.add_argument('--r10', type=float)
    p.add_argument('--s', type=float)
    p.add_argument('--areas', help='脉冲面积 CSV')
    p.add_argument('--unit-area', dest='unit_area', type=float)
    p.add_argument('--sigma-area', dest='sigma_area', type=float)
    p.add_argument('--background', help='每个 n 的本底率 (counts/h)，逗号分隔')
    p.add_argument('--acquisition-time-s', dest='acquisition_time_s', type=float)
    p.add_argument('--resamples', type=int, help='bootstrap 次数')
    _add_output(p)

    for name, func, help_text in (('spectra-sim', cmd_spectra_sim, '合成光谱图'),
                                  ('spectra-fit', cmd_spectra_fit, '光谱图拟合与 FSS')):
        p = sub(name, func, help_text)
        p.add_argument('--binding-sign', dest='binding_sign', choices=list(spectra.BINDING_SIGNS))
        p.add_argument('--resolution', action='store_true', help='计入 25 μeV 光谱仪分辨率')
        _add_output(p)
        if name == 'spectra-sim':
            p.add_argument('--delta-fss-uev', dest='delta_fss_uev', type=float)
            p.add_argument('--center-energy-uev', dest='center_energy_uev', type=float)
            p.add_argument('--linewidth-x-uev', dest='linewidth_x_uev', type=float)
            p.add_argument('--linewidth-xx-uev', dest='linewidth_xx_uev', type=float)
            p.add_argument('--intensity-ratio', dest='intensity_ratio', type=float)
            p.add_argument('--principal-axis-deg', dest='principal_axis_deg', type=float)
            p.add_argument('--n-angles', dest='n_angles', type=int)
            p.add_argument('--noise-level', dest='noise_level', type=float)
        else:
            p.add_argument('--input', required=True, help='光谱图 CSV')

    p = sub('report', cmd_report, '把 CSV 渲染为 SVG')
    p.add_argument('--input', required=True)
    p.add_argument('--title')
    _add_output(p)

    p = sub('ledger', cmd_ledger, '运行台账')
    p.add_argument('action', choices=['stats', 'list', 'health'])
    p.add_argument('--limit', type=int, default=20)

    sub('check-config', cmd_check_config, '打印并验证配置')

    return parser


def main(argv=None):
    """
    主函数

    Returns:
        int: 退出码（0 成功；2 用法；3 数据/格式；4 拟合失败）
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    try:
        run_config = config.load_run_config(args.config) if getattr(args, 'config', None) else {}
        log_event('CLI', command=args.command, seed=_seed(args, run_config))
        args.func(args, run_config)
        return EXIT_OK
    except KeyboardInterrupt:
        print("\n\n已中断", file=sys.stderr)
        return 130
    except Exception as e:
        log_exception(e, context=args.command)
        print(f"✗ 错误: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == '__main__':
    sys.exit(main())
