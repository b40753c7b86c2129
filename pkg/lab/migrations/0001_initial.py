# Generated by Django 5.2.8 on 2026-10-18 10:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='Run',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('kind', models.CharField(choices=[('linear_decay', 'Linear decay'), ('simulate', 'Simulate'), ('invariants', 'Invariants'), ('weak_strong', 'Weak-strong'), ('greens_dump', "Green's function dump")], max_length=20)),
                ('status', models.CharField(choices=[('RUNNING', 'Running'), ('PASSED', 'Passed'), ('FAILED', 'Certificate failed'), ('ERROR', 'Error')], default='RUNNING', max_length=10)),
                ('config', models.JSONField(default=dict)),
                ('config_hash', models.CharField(db_index=True, max_length=40)),
                ('seed', models.CharField(blank=True, max_length=20)),
                ('output_dir', models.CharField(max_length=500)),
                ('exit_code', models.SmallIntegerField(blank=True, null=True)),
                ('summary', models.JSONField(blank=True, default=dict)),
                ('code_version', models.CharField(default='0.1.0', max_length=20)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='Artifact',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=200)),
                ('kind', models.CharField(choices=[('CSV', 'CSV table'), ('JSON', 'JSON document'), ('SNAPSHOT', 'Snapshot'), ('MANIFEST', 'Manifest')], max_length=10)),
                ('path', models.CharField(max_length=700)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='artifacts', to='lab.run')),
            ],
            options={
                'ordering': ['name'],
                'constraints': [models.UniqueConstraint(fields=('run', 'name'), name='unique_artifact_name_per_run')],
            },
        ),
    ]
