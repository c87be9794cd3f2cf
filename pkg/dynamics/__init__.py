"""
安定性検証パッケージ
式の構文解析・自動微分・発散条件の検証・積分条件・軌道シミュレーション
"""
