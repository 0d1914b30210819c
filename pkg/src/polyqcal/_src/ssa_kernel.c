/* Direct-method stochastic simulation kernel.
 *
 * Hazards are small RPN programs interpreted against (state, params).
 * The kernel owns no RNG: it consumes pre-drawn uniforms from a buffer
 * supplied by the caller and returns NEED_RANDOM when the buffer runs
 * out, so the caller controls the stream.  The Python reference kernel
 * mirrors this file operation-for-operation; keep arithmetic order in
 * sync between the two.
 *
 * Build: gcc -O2 -ffp-contract=off -fPIC -shared ssa_kernel.c -o ...
 */

#include <math.h>
#include <stdint.h>

/* opcodes */
#define OP_CONST   0
#define OP_PARAM   1
#define OP_SPECIES 2
#define OP_ADD     3
#define OP_SUB     4
#define OP_MUL     5
#define OP_DIV     6
#define OP_CHOOSE  7
#define OP_HILL    8

/* statuses */
#define SSA_OK_STOP     0
#define SSA_NEED_RANDOM 1
#define SSA_OK_BUDGET   2
#define SSA_ABORT_POP   3
#define SSA_ERR_DIV     4
#define SSA_ERR_HAZARD  5

#define STACK_MAX 32

static double eval_program(const int32_t *code, const double *carg,
                           const int32_t *iarg, int64_t lo, int64_t hi,
                           const int64_t *state, const double *params,
                           int *err)
{
    double st[STACK_MAX];
    int sp = 0;
    int64_t pc;
    for (pc = lo; pc < hi; pc++) {
        switch (code[pc]) {
        case OP_CONST:
            st[sp++] = carg[pc];
            break;
        case OP_PARAM:
            st[sp++] = params[iarg[pc]];
            break;
        case OP_SPECIES:
            st[sp++] = (double)state[iarg[pc]];
            break;
        case OP_ADD:
            sp--; st[sp - 1] = st[sp - 1] + st[sp];
            break;
        case OP_SUB:
            sp--; st[sp - 1] = st[sp - 1] - st[sp];
            break;
        case OP_MUL:
            sp--; st[sp - 1] = st[sp - 1] * st[sp];
            break;
        case OP_DIV:
            sp--;
            if (st[sp] == 0.0) { *err = 1; return 0.0; }
            st[sp - 1] = st[sp - 1] / st[sp];
            break;
        case OP_CHOOSE: {
            sp--;
            double kd = st[sp];
            double x = st[sp - 1];
            int64_t k = (int64_t)kd;
            double acc = 1.0;
            int64_t j;
            for (j = 0; j < k; j++) acc *= (x - (double)j);
            for (j = 2; j <= k; j++) acc /= (double)j;
            if (acc < 0.0) acc = 0.0;  /* x < k gives alternating signs */
            st[sp - 1] = acc;
            break;
        }
        case OP_HILL: {
            double nn = st[--sp];
            double kk = st[--sp];
            double ss = st[sp - 1];
            double num, den;
            if (nn == 1.0) { num = ss; den = ss + kk; }
            else { num = pow(ss, nn); den = num + pow(kk, nn); }
            st[sp - 1] = (den == 0.0) ? 0.0 : num / den;
            break;
        }
        }
    }
    return st[0];
}

/* Advance the jump process until t_stop, buffer exhaustion, a step
 * budget, a population cap, or a hazard error.  All array state is
 * caller-owned and mutated in place so calls can be resumed. */
int64_t ssa_advance(int64_t *state, int64_t n_species,
                    const double *params,
                    const int32_t *code, const double *carg,
                    const int32_t *iarg, const int64_t *prog_off,
                    const int64_t *st_off, const int64_t *st_sp,
                    const int64_t *st_dl, const int64_t *rx_popdelta,
                    const int64_t *dep_off, const int64_t *dep_list,
                    int64_t n_reactions,
                    double *t_io, double t_stop,
                    const double *u, int64_t n_u, int64_t *u_used_io,
                    int64_t pop_cap, int64_t *pop_io,
                    int64_t max_steps, int64_t *steps_io,
                    int64_t *err_reaction_io,
                    double *hbuf)
{
    double t = *t_io;
    int64_t u_used = *u_used_io;
    int64_t pop = *pop_io;
    int64_t steps = 0;
    double a0 = 0.0;
    int64_t i, j;
    int err = 0;

    (void)n_species;

    for (i = 0; i < n_reactions; i++) {
        double h = eval_program(code, carg, iarg, prog_off[i], prog_off[i + 1],
                                state, params, &err);
        if (err) { *err_reaction_io = i; *steps_io = steps; *u_used_io = u_used; *t_io = t; *pop_io = pop; return SSA_ERR_DIV; }
        if (!(h >= 0.0) || !isfinite(h)) { *err_reaction_io = i; *steps_io = steps; *u_used_io = u_used; *t_io = t; *pop_io = pop; return SSA_ERR_HAZARD; }
        hbuf[i] = h;
        a0 += h;
    }

    for (;;) {
        if (a0 <= 0.0) { t = t_stop; break; }
        if (u_used + 2 > n_u) {
            *t_io = t; *u_used_io = u_used; *pop_io = pop; *steps_io = steps;
            return SSA_NEED_RANDOM;
        }
        {
            double u1 = u[u_used++];
            double dt = -log1p(-u1) / a0;
            if (t + dt >= t_stop) { t = t_stop; break; }
            t = t + dt;
        }
        {
            double target = u[u_used++] * a0;
            double c = 0.0;
            int64_t r = -1;
            for (i = 0; i < n_reactions; i++) {
                c += hbuf[i];
                if (target < c) { r = i; break; }
            }
            if (r < 0) {
                /* round-off straggler: take the last positive hazard */
                for (i = n_reactions - 1; i >= 0; i--)
                    if (hbuf[i] > 0.0) { r = i; break; }
                if (r < 0) { t = t_stop; break; }
            }
            for (j = st_off[r]; j < st_off[r + 1]; j++)
                state[st_sp[j]] += st_dl[j];
            pop += rx_popdelta[r];
            steps++;
            if (pop > pop_cap) {
                *t_io = t; *u_used_io = u_used; *pop_io = pop; *steps_io = steps;
                return SSA_ABORT_POP;
            }
            for (j = dep_off[r]; j < dep_off[r + 1]; j++) {
                int64_t k = dep_list[j];
                double h = eval_program(code, carg, iarg, prog_off[k],
                                        prog_off[k + 1], state, params, &err);
                if (err) { *err_reaction_io = k; *t_io = t; *u_used_io = u_used; *pop_io = pop; *steps_io = steps; return SSA_ERR_DIV; }
                if (!(h >= 0.0) || !isfinite(h)) { *err_reaction_io = k; *t_io = t; *u_used_io = u_used; *pop_io = pop; *steps_io = steps; return SSA_ERR_HAZARD; }
                a0 += h - hbuf[k];
                hbuf[k] = h;
            }
            if (steps >= max_steps) {
                *t_io = t; *u_used_io = u_used; *pop_io = pop; *steps_io = steps;
                return SSA_OK_BUDGET;
            }
        }
    }

    *t_io = t; *u_used_io = u_used; *pop_io = pop; *steps_io = steps;
    return SSA_OK_STOP;
}
