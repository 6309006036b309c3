from django.db import models
from django.utils import timezone


class RunRecord(models.Model):
    """History of command runs and where their outputs went"""

    RUNNING = 'running'
    SUCCEEDED = 'succeeded'
    FAILED = 'failed'
    STATUS_CHOICES = [
        (RUNNING, 'Running'),
        (SUCCEEDED, 'Succeeded'),
        (FAILED, 'Failed'),
    ]

    command = models.CharField(max_length=50)
    variant = models.CharField(max_length=4, blank=True)
    seed = models.BigIntegerField(null=True, blank=True)
    config = models.JSONField(default=dict, blank=True)
    output_dir = models.CharField(max_length=500)
    checkpoint_path = models.CharField(max_length=500, blank=True)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default=RUNNING)
    summary = models.JSONField(default=dict, blank=True)
    error_message = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_at']
        indexes = [
            models.Index(fields=['command', 'variant', 'status'], name='simulator_run_lookup_idx'),
        ]

    def __str__(self):
        label = f"{self.command} {self.variant}".strip()
        return f"{label} ({self.status}) - {self.created_at}"

    def mark_finished(self, summary=None, checkpoint_path=''):
        self.status = self.SUCCEEDED
        self.summary = summary or {}
        if checkpoint_path:
            self.checkpoint_path = str(checkpoint_path)
        self.finished_at = timezone.now()
        self.save()

    def mark_failed(self, error):
        self.status = self.FAILED
        self.error_message = str(error)
        self.finished_at = timezone.now()
        self.save()

    @classmethod
    def latest_checkpoint(cls, variant):
        """Checkpoint path of the most recent successful training run"""
        record = (
            cls.objects.filter(command='train', variant=variant, status=cls.SUCCEEDED)
            .exclude(checkpoint_path='')
            .first()
        )
        return record.checkpoint_path if record else None
